//! Remote foresight protocol: `POST /subgoal` with a JSON body
//! `{"current": <base64 PNG>, "prompt": <string>, "aux": <base64 PNG>|null}`,
//! answered by `{"subgoal": <base64 PNG>}`. Any non-200 response is a
//! transport error.
//!
//! Images travel as 8-bit grayscale PNG. Because rendered images live on the
//! `k/255` intensity grid, the round trip is lossless and a stub server
//! wrapping [`KeyframeOracle`] reproduces the in-process oracle bit-exactly.
//!
//! Both ends are implemented directly over TCP: the protocol is a single
//! fixed POST on a loopback socket, which does not warrant an HTTP stack.

use crate::error::{Error, Result};
use crate::foresight::{Foresight, ForesightRequest, KeyframeOracle, Subgoal};
use crate::image::{ImageBuffer, Intrinsics};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

#[derive(Serialize, Deserialize)]
struct SubgoalRequestBody {
    current: String,
    prompt: String,
    aux: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct SubgoalResponseBody {
    subgoal: String,
}

/// Encodes a grayscale image as an 8-bit PNG.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Transport(format!("png encode: {e}")))?;
        writer
            .write_image_data(&img.to_u8())
            .map_err(|e| Error::Transport(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Decodes an 8-bit grayscale PNG into an image with the given intrinsics;
/// the dimensions must match.
pub fn decode_png(bytes: &[u8], intrinsics: Intrinsics) -> Result<ImageBuffer> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Transport(format!("png decode: {e}")))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Transport(format!("png decode: {e}")))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Transport(format!(
            "expected 8-bit grayscale png, got {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    if info.width as usize != intrinsics.width || info.height as usize != intrinsics.height {
        return Err(Error::Transport(format!(
            "png is {}x{}, expected {}x{}",
            info.width, info.height, intrinsics.width, intrinsics.height
        )));
    }
    ImageBuffer::from_u8(intrinsics, &buf[..info.buffer_size()])
}

fn encode_image_field(img: &ImageBuffer) -> Result<String> {
    Ok(BASE64.encode(encode_png(img)?))
}

fn decode_image_field(field: &str, intrinsics: Intrinsics) -> Result<ImageBuffer> {
    let bytes = BASE64
        .decode(field)
        .map_err(|e| Error::Transport(format!("base64: {e}")))?;
    decode_png(&bytes, intrinsics)
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

/// Foresight client for a remote sub-goal service. The sub-goal's render
/// pose is unknown over the wire, so trials driven by a remote service
/// cannot use ground-truth flow.
pub struct RemoteForesight {
    host: String,
    path: String,
    intrinsics: Intrinsics,
}

impl RemoteForesight {
    /// `url` must look like `http://host:port/subgoal`.
    pub fn new(url: &str, intrinsics: Intrinsics) -> Result<Self> {
        let rest = url
            .strip_prefix("http://")
            .ok_or_else(|| Error::Transport(format!("unsupported url: {url}")))?;
        let (host, path) = match rest.find('/') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, "/subgoal"),
        };
        Ok(RemoteForesight {
            host: host.to_string(),
            path: path.to_string(),
            intrinsics,
        })
    }

    fn post(&self, body: &str) -> Result<String> {
        let mut stream = TcpStream::connect(&self.host)
            .map_err(|e| Error::Transport(format!("connect {}: {e}", self.host)))?;
        let request = format!(
            "POST {} HTTP/1.1\r\nHost: {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            self.path,
            self.host,
            body.len(),
            body
        );
        stream
            .write_all(request.as_bytes())
            .map_err(|e| Error::Transport(format!("send: {e}")))?;
        let mut reader = BufReader::new(stream);
        let mut status_line = String::new();
        reader
            .read_line(&mut status_line)
            .map_err(|e| Error::Transport(format!("read status: {e}")))?;
        let status: u16 = status_line
            .split_whitespace()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Transport(format!("bad status line: {status_line:?}")))?;
        let mut content_length = None;
        loop {
            let mut line = String::new();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::Transport(format!("read header: {e}")))?;
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse::<usize>().ok();
            }
        }
        let mut body = match content_length {
            Some(n) => {
                let mut buf = vec![0u8; n];
                reader
                    .read_exact(&mut buf)
                    .map_err(|e| Error::Transport(format!("read body: {e}")))?;
                buf
            }
            None => {
                let mut buf = Vec::new();
                reader
                    .read_to_end(&mut buf)
                    .map_err(|e| Error::Transport(format!("read body: {e}")))?;
                buf
            }
        };
        if status != 200 {
            return Err(Error::Transport(format!(
                "service answered {status}: {}",
                String::from_utf8_lossy(&body)
            )));
        }
        let text = String::from_utf8(std::mem::take(&mut body))
            .map_err(|e| Error::Transport(format!("non-utf8 body: {e}")))?;
        Ok(text)
    }
}

impl Foresight for RemoteForesight {
    fn next_subgoal(&mut self, req: &ForesightRequest) -> Result<Subgoal> {
        req.validate()?;
        let body = serde_json::to_string(&SubgoalRequestBody {
            current: encode_image_field(&req.current)?,
            prompt: req.prompt.clone(),
            aux: req.aux.as_ref().map(encode_image_field).transpose()?,
        })?;
        let response = self.post(&body)?;
        let parsed: SubgoalResponseBody = serde_json::from_str(&response)
            .map_err(|e| Error::Transport(format!("bad response json: {e}")))?;
        Ok(Subgoal {
            image: decode_image_field(&parsed.subgoal, self.intrinsics)?,
            render_pose: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Loopback stub server
// ---------------------------------------------------------------------------

/// Loopback HTTP stub serving a [`KeyframeOracle`] behind the wire protocol.
/// Binds an ephemeral port on construction; shuts down on [`stop`] or drop.
///
/// [`stop`]: ForesightServer::stop
pub struct ForesightServer {
    port: u16,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ForesightServer {
    pub fn spawn(oracle: KeyframeOracle, intrinsics: Intrinsics) -> Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", 0))?;
        let port = listener.local_addr()?.port();
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let oracle = Arc::new(Mutex::new(oracle));
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let _ = handle_connection(stream, &oracle, &intrinsics);
            }
        });
        Ok(ForesightServer { port, stop, handle: Some(handle) })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn url(&self) -> String {
        format!("http://127.0.0.1:{}/subgoal", self.port)
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(("127.0.0.1", self.port));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ForesightServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn handle_connection(
    stream: TcpStream,
    oracle: &Arc<Mutex<KeyframeOracle>>,
    intrinsics: &Intrinsics,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next().unwrap_or("");
    let path = parts.next().unwrap_or("");

    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }

    if method != "POST" || path != "/subgoal" {
        return respond(&stream, 404, "unknown endpoint");
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;

    match serve_subgoal(&body, oracle, intrinsics) {
        Ok(json) => respond(&stream, 200, &json),
        Err(e) => respond(&stream, 400, &format!("{{\"error\": {:?}}}", e.to_string())),
    }
}

fn serve_subgoal(
    body: &[u8],
    oracle: &Arc<Mutex<KeyframeOracle>>,
    intrinsics: &Intrinsics,
) -> Result<String> {
    let parsed: SubgoalRequestBody = serde_json::from_slice(body)?;
    let req = ForesightRequest {
        current: decode_image_field(&parsed.current, *intrinsics)?,
        prompt: parsed.prompt,
        aux: parsed
            .aux
            .as_deref()
            .map(|a| decode_image_field(a, *intrinsics))
            .transpose()?,
    };
    let subgoal = oracle.lock().expect("oracle lock").next_subgoal(&req)?;
    Ok(serde_json::to_string(&SubgoalResponseBody {
        subgoal: encode_image_field(&subgoal.image)?,
    })?)
}

fn respond(mut stream: &TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        _ => "Not Found",
    };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())
}
