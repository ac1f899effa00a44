use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::local_query;
use super::wire::{error_to_wire, parse_request, Response, BUDGET_EXCEEDED};
use crate::error::{invalid, Result};
use crate::textgen::TextModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServeOptions {
    pub output_k: usize,
    /// Per-connection query budget.
    pub budget: Option<usize>,
}

/// A running query service. Each connection gets its own thread; requests on
/// a connection are answered in order.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn spawn<A: ToSocketAddrs>(model: Arc<TextModel>, addr: A, opts: ServeOptions) -> Result<Self> {
        if opts.output_k == 0 || opts.output_k > model.vocab_size() {
            return Err(invalid(format!("output_k {} outside 1..={}", opts.output_k, model.vocab_size())));
        }
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                match stream {
                    Ok(s) => {
                        let model = model.clone();
                        thread::spawn(move || {
                            if let Err(e) = handle_connection(&model, s, opts) {
                                log::debug!("connection ended: {e}");
                            }
                        });
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        });
        log::info!("serving on {addr} (output_k {})", opts.output_k);
        Ok(Self { addr, stop, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    /// Stops accepting new connections. Open connections finish normally.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn handle_connection(model: &TextModel, stream: TcpStream, opts: ServeOptions) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let mut used = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match parse_request(&line) {
            Err((id, e)) => Response::err(id, e),
            Ok(req) => {
                if opts.budget.is_some_and(|b| used >= b) {
                    Response::err(req.id, BUDGET_EXCEEDED)
                } else {
                    used += 1;
                    match local_query(model, opts.output_k, &req.x, req.y.as_deref()) {
                        Ok(r) => Response::ok(req.id, r.positions),
                        Err(e) => Response::err(req.id, error_to_wire(&e)),
                    }
                }
            }
        };
        let mut out = serde_json::to_string(&resp).map_err(std::io::Error::other)?;
        out.push('\n');
        writer.write_all(out.as_bytes())?;
    }
    Ok(())
}
