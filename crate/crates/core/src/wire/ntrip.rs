//! NTRIP 1.0 subset: a caster that fans frames out to authenticated clients
//! on one mountpoint, a matching client, and an in-process loopback link.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use log::{debug, warn};

use super::{CorrectionFrame, FrameDecoder, WireError};

const MAX_REQUEST: usize = 8192;
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credentials {
    pub user: String,
    pub password: String,
}

impl Credentials {
    pub fn new(user: impl Into<String>, password: impl Into<String>) -> Self {
        Credentials { user: user.into(), password: password.into() }
    }

    fn basic_token(&self) -> String {
        BASE64.encode(format!("{}:{}", self.user, self.password))
    }
}

/// Reads up to and including the blank line ending an HTTP-style header.
/// Returns the header text and any bytes received after it.
fn read_header(stream: &mut TcpStream) -> std::io::Result<(String, Vec<u8>)> {
    let mut buf = Vec::with_capacity(512);
    let mut chunk = [0u8; 512];
    loop {
        if let Some(end) = find_subslice(&buf, b"\r\n\r\n") {
            let rest = buf.split_off(end + 4);
            return Ok((String::from_utf8_lossy(&buf).into_owned(), rest));
        }
        if buf.len() > MAX_REQUEST {
            return Err(std::io::Error::new(ErrorKind::InvalidData, "header too long"));
        }
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(std::io::Error::new(ErrorKind::UnexpectedEof, "closed during handshake"));
        }
        buf.extend_from_slice(&chunk[..n]);
    }
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

struct Shared {
    mountpoint: String,
    credentials: Credentials,
    sourcetable: String,
    clients: Mutex<Vec<TcpStream>>,
    station_info: Mutex<Option<Vec<u8>>>,
    stop: AtomicBool,
}

/// A running caster. Dropping it stops the accept loop and closes clients.
pub struct Caster {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept_thread: Option<JoinHandle<()>>,
}

impl Caster {
    pub fn serve(
        listen: impl ToSocketAddrs,
        mountpoint: &str,
        credentials: Credentials,
    ) -> Result<Caster, WireError> {
        let listener = TcpListener::bind(listen).map_err(WireError::BindFailure)?;
        let addr = listener.local_addr().map_err(WireError::BindFailure)?;
        let shared = Arc::new(Shared {
            mountpoint: mountpoint.to_string(),
            credentials,
            sourcetable: sourcetable(mountpoint),
            clients: Mutex::new(Vec::new()),
            station_info: Mutex::new(None),
            stop: AtomicBool::new(false),
        });
        let accept_shared = Arc::clone(&shared);
        let accept_thread = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if accept_shared.stop.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(stream) => {
                        let s = Arc::clone(&accept_shared);
                        std::thread::spawn(move || {
                            if let Err(e) = handshake(stream, &s) {
                                debug!("client handshake failed: {e}");
                            }
                        });
                    }
                    Err(e) => warn!("accept failed: {e}"),
                }
            }
        });
        Ok(Caster { addr, shared, accept_thread: Some(accept_thread) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn mountpoint(&self) -> &str {
        &self.shared.mountpoint
    }

    /// Replaces the cached station-info frame handed to clients on connect.
    pub fn set_station_info(&self, frame_bytes: Vec<u8>) {
        *self.shared.station_info.lock().expect("caster lock") = Some(frame_bytes);
    }

    /// Writes `bytes` to every connected client in order. Clients whose
    /// socket fails are dropped; returns how many received the bytes.
    pub fn publish(&self, bytes: &[u8]) -> usize {
        let mut clients = self.shared.clients.lock().expect("caster lock");
        clients.retain_mut(|c| match c.write_all(bytes) {
            Ok(()) => true,
            Err(e) => {
                debug!("{}", WireError::ClientDisconnect(e));
                false
            }
        });
        clients.len()
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().expect("caster lock").len()
    }

    /// Blocks until at least `n` clients are streaming or `timeout` elapses.
    pub fn wait_for_clients(&self, n: usize, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        while Instant::now() < deadline {
            if self.client_count() >= n {
                return true;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
        self.client_count() >= n
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if self.shared.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_thread.take() {
            let _ = h.join();
        }
        for c in self.shared.clients.lock().expect("caster lock").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Caster {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn sourcetable(mountpoint: &str) -> String {
    let body = format!(
        "STR;{mountpoint};netrtk;RTCM 3;1(1),2(1);2;GPS+GAL;SIM;SWE;59.35;18.07;0;0;netrtk;none;B;N;0;\r\nENDSOURCETABLE\r\n"
    );
    format!(
        "SOURCETABLE 200 OK\r\nServer: NTRIP netrtk/0.1\r\nContent-Type: text/plain\r\nContent-Length: {}\r\n\r\n{}",
        body.len(),
        body
    )
}

fn handshake(mut stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    if shared.stop.load(Ordering::SeqCst) {
        return Ok(());
    }
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.set_write_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let (header, _) = read_header(&mut stream)?;
    let mut lines = header.split("\r\n");
    let request = lines.next().unwrap_or_default();
    let mut parts = request.split_whitespace();
    let method = parts.next().unwrap_or_default();
    let path = parts.next().unwrap_or_default();
    let mount = path.trim_start_matches('/');
    if method != "GET" || mount.is_empty() || mount != shared.mountpoint {
        stream.write_all(shared.sourcetable.as_bytes())?;
        return stream.shutdown(Shutdown::Both);
    }
    let authorized = lines.any(|l| {
        let Some((name, value)) = l.split_once(':') else { return false };
        if !name.trim().eq_ignore_ascii_case("authorization") {
            return false;
        }
        let mut v = value.split_whitespace();
        matches!(v.next(), Some(s) if s.eq_ignore_ascii_case("basic"))
            && v.next() == Some(shared.credentials.basic_token().as_str())
    });
    if !authorized {
        stream.write_all(b"HTTP/1.1 401 Unauthorized\r\nWWW-Authenticate: Basic realm=\"netrtk\"\r\n\r\n")?;
        return stream.shutdown(Shutdown::Both);
    }
    stream.set_read_timeout(None)?;
    stream.set_nodelay(true)?;
    let mut clients = shared.clients.lock().expect("caster lock");
    stream.write_all(b"ICY 200 OK\r\n\r\n")?;
    if let Some(info) = shared.station_info.lock().expect("caster lock").as_ref() {
        stream.write_all(info)?;
    }
    clients.push(stream);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedFrame {
    pub frame: CorrectionFrame,
    pub arrived: Instant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClientEvent {
    Frame(ReceivedFrame),
    /// Nothing arrived for at least the staleness limit.
    Stale { silent_for: Duration },
}

pub struct NtripClient {
    stream: TcpStream,
    decoder: FrameDecoder,
    max_age: Duration,
    last_activity: Instant,
}

impl NtripClient {
    pub fn connect(
        addr: impl ToSocketAddrs,
        mountpoint: &str,
        credentials: &Credentials,
        max_age: Duration,
    ) -> Result<Self, WireError> {
        let mut stream = TcpStream::connect(addr).map_err(WireError::ConnectFailure)?;
        stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let request = format!(
            "GET /{mountpoint} HTTP/1.1\r\nUser-Agent: NTRIP netrtk/0.1\r\nAuthorization: Basic {}\r\n\r\n",
            credentials.basic_token()
        );
        stream.write_all(request.as_bytes())?;
        let (header, rest) = read_header(&mut stream).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => WireError::StreamClosed,
            _ => WireError::Io(e),
        })?;
        let status = header.lines().next().unwrap_or_default().to_string();
        if status.starts_with("ICY 200") {
            let mut decoder = FrameDecoder::new();
            decoder.push(&rest);
            return Ok(NtripClient { stream, decoder, max_age, last_activity: Instant::now() });
        }
        if status.contains(" 401") {
            return Err(WireError::AuthRejected);
        }
        if status.starts_with("SOURCETABLE") {
            let mut table = String::from_utf8_lossy(&rest).into_owned();
            let _ = stream.read_to_string(&mut table);
            return Err(WireError::MountNotFound(table));
        }
        Err(WireError::BadResponse(status))
    }

    pub fn decoder(&self) -> &FrameDecoder {
        &self.decoder
    }

    /// Next decoded frame, or `Stale` after `max_age` of silence.
    pub fn next_event(&mut self) -> Result<ClientEvent, WireError> {
        let mut chunk = [0u8; 4096];
        loop {
            if let Some(frame) = self.decoder.next_frame() {
                let now = Instant::now();
                self.last_activity = now;
                return Ok(ClientEvent::Frame(ReceivedFrame { frame, arrived: now }));
            }
            let silent = self.last_activity.elapsed();
            if silent >= self.max_age {
                self.last_activity = Instant::now();
                return Ok(ClientEvent::Stale { silent_for: silent });
            }
            let wait = (self.max_age - silent).max(Duration::from_millis(1));
            self.stream.set_read_timeout(Some(wait))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Err(WireError::StreamClosed),
                Ok(n) => self.decoder.push(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(WireError::Io(e)),
            }
        }
    }

    /// Next frame, skipping staleness notifications.
    pub fn next_frame(&mut self) -> Result<ReceivedFrame, WireError> {
        loop {
            if let ClientEvent::Frame(f) = self.next_event()? {
                return Ok(f);
            }
        }
    }

    pub fn disconnect(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

/// Requests `GET /` and returns the caster's sourcetable text.
pub fn fetch_sourcetable(addr: impl ToSocketAddrs) -> Result<String, WireError> {
    let mut stream = TcpStream::connect(addr).map_err(WireError::ConnectFailure)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    stream.write_all(b"GET / HTTP/1.1\r\nUser-Agent: NTRIP netrtk/0.1\r\n\r\n")?;
    let mut text = String::new();
    stream.read_to_string(&mut text)?;
    if !text.starts_with("SOURCETABLE 200 OK") {
        return Err(WireError::BadResponse(text.lines().next().unwrap_or_default().to_string()));
    }
    Ok(text)
}

/// In-process byte link with the same framing path as the TCP transport.
/// Optional garbage injection models a lossy medium.
#[derive(Debug, Default)]
pub struct LoopbackLink {
    in_flight: VecDeque<Vec<u8>>,
    decoder: FrameDecoder,
}

impl LoopbackLink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&mut self, bytes: &[u8]) {
        self.in_flight.push_back(bytes.to_vec());
    }

    /// Puts arbitrary bytes on the link ahead of anything sent afterwards.
    pub fn inject_garbage(&mut self, bytes: &[u8]) {
        self.in_flight.push_back(bytes.to_vec());
    }

    pub fn recv(&mut self) -> Option<CorrectionFrame> {
        while let Some(chunk) = self.in_flight.pop_front() {
            self.decoder.push(&chunk);
        }
        self.decoder.next_frame()
    }

    pub fn decoder(&self) -> &FrameDecoder {
        &self.decoder
    }
}
