//! Point-to-point transports between message-passing ranks.
//!
//! Socket frames are length-prefixed:
//!
//! ```text
//! +----------------+----------------+------------------+
//! | len: u32 (LE)  | edge: u32 (LE) | body: len bytes  |
//! +----------------+----------------+------------------+
//! ```
//!
//! Both media deliver reliably and preserve per-sender order.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, TcpListener, TcpStream};

use crossbeam_channel::{Receiver, Sender, TryRecvError};

use super::Medium;

pub const FRAME_HEADER_BYTES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub edge: u32,
    pub body: Vec<u8>,
}

/// Appends one encoded frame to `out`.
pub fn encode_frame(edge: u32, body: &[u8], out: &mut Vec<u8>) {
    let len = u32::try_from(body.len()).expect("frame body exceeds u32::MAX bytes");
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&edge.to_le_bytes());
    out.extend_from_slice(body);
}

/// Incremental decoder for a byte stream of frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pos: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos == self.buf.len() {
            self.buf.clear();
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, if one has fully arrived.
    pub fn next_frame(&mut self) -> Option<Frame> {
        let avail = &self.buf[self.pos..];
        if avail.len() < FRAME_HEADER_BYTES {
            return None;
        }
        let len = u32::from_le_bytes(avail[0..4].try_into().unwrap()) as usize;
        let edge = u32::from_le_bytes(avail[4..8].try_into().unwrap());
        if avail.len() < FRAME_HEADER_BYTES + len {
            return None;
        }
        let body = avail[FRAME_HEADER_BYTES..FRAME_HEADER_BYTES + len].to_vec();
        self.pos += FRAME_HEADER_BYTES + len;
        if self.pos > 1 << 16 {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        Some(Frame { edge, body })
    }

    /// Bytes received but not yet returned as frames.
    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }
}

/// One rank's view of the transport.
pub(crate) trait Endpoint: Send {
    fn send(&mut self, dest: usize, edge: u32, body: &[u8]) -> io::Result<()>;
    fn try_recv(&mut self) -> io::Result<Option<Frame>>;
}

/// Builds connected endpoints for `ranks` ranks. Not timed.
pub(crate) fn connect(medium: Medium, ranks: usize) -> io::Result<Vec<Box<dyn Endpoint>>> {
    match medium {
        Medium::SharedQueue => Ok(QueueEndpoint::mesh(ranks)
            .into_iter()
            .map(|e| Box::new(e) as Box<dyn Endpoint>)
            .collect()),
        Medium::LocalSocket => Ok(SocketEndpoint::mesh(ranks)?
            .into_iter()
            .map(|e| Box::new(e) as Box<dyn Endpoint>)
            .collect()),
    }
}

struct QueueEndpoint {
    peers: Vec<Sender<Frame>>,
    inbox: Receiver<Frame>,
}

impl QueueEndpoint {
    fn mesh(ranks: usize) -> Vec<QueueEndpoint> {
        let (senders, receivers): (Vec<_>, Vec<_>) =
            (0..ranks).map(|_| crossbeam_channel::unbounded()).unzip();
        receivers
            .into_iter()
            .map(|inbox| QueueEndpoint {
                peers: senders.clone(),
                inbox,
            })
            .collect()
    }
}

impl Endpoint for QueueEndpoint {
    fn send(&mut self, dest: usize, edge: u32, body: &[u8]) -> io::Result<()> {
        self.peers[dest]
            .send(Frame {
                edge,
                body: body.to_vec(),
            })
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "rank inbox closed"))
    }

    fn try_recv(&mut self) -> io::Result<Option<Frame>> {
        match self.inbox.try_recv() {
            Ok(frame) => Ok(Some(frame)),
            Err(TryRecvError::Empty) | Err(TryRecvError::Disconnected) => Ok(None),
        }
    }
}

struct Incoming {
    stream: TcpStream,
    decoder: FrameDecoder,
    open: bool,
}

struct SocketEndpoint {
    outgoing: Vec<Option<TcpStream>>,
    incoming: Vec<Incoming>,
    backlog: VecDeque<Frame>,
    scratch: Vec<u8>,
    read_buf: Box<[u8]>,
}

impl SocketEndpoint {
    /// One loopback stream per ordered rank pair.
    fn mesh(ranks: usize) -> io::Result<Vec<SocketEndpoint>> {
        let listeners = (0..ranks)
            .map(|_| TcpListener::bind((Ipv4Addr::LOCALHOST, 0)))
            .collect::<io::Result<Vec<_>>>()?;
        let mut endpoints: Vec<SocketEndpoint> = (0..ranks)
            .map(|_| SocketEndpoint {
                outgoing: (0..ranks).map(|_| None).collect(),
                incoming: Vec::new(),
                backlog: VecDeque::new(),
                scratch: Vec::new(),
                read_buf: vec![0u8; 64 * 1024].into_boxed_slice(),
            })
            .collect();
        for src in 0..ranks {
            for dst in 0..ranks {
                if src == dst {
                    continue;
                }
                let out = TcpStream::connect(listeners[dst].local_addr()?)?;
                let (inc, _) = listeners[dst].accept()?;
                for s in [&out, &inc] {
                    s.set_nodelay(true)?;
                    s.set_nonblocking(true)?;
                }
                endpoints[src].outgoing[dst] = Some(out);
                endpoints[dst].incoming.push(Incoming {
                    stream: inc,
                    decoder: FrameDecoder::new(),
                    open: true,
                });
            }
        }
        Ok(endpoints)
    }

    fn poll_incoming(&mut self) -> io::Result<()> {
        for inc in self.incoming.iter_mut().filter(|i| i.open) {
            loop {
                match inc.stream.read(&mut self.read_buf) {
                    Ok(0) => {
                        inc.open = false;
                        break;
                    }
                    Ok(n) => inc.decoder.push(&self.read_buf[..n]),
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => return Err(e),
                }
            }
            while let Some(frame) = inc.decoder.next_frame() {
                self.backlog.push_back(frame);
            }
        }
        Ok(())
    }
}

impl Endpoint for SocketEndpoint {
    fn send(&mut self, dest: usize, edge: u32, body: &[u8]) -> io::Result<()> {
        let mut frame = std::mem::take(&mut self.scratch);
        frame.clear();
        encode_frame(edge, body, &mut frame);
        let mut written = 0;
        while written < frame.len() {
            let stream = self.outgoing[dest]
                .as_mut()
                .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "no stream to rank"))?;
            match stream.write(&frame[written..]) {
                Ok(0) => return Err(io::ErrorKind::WriteZero.into()),
                Ok(n) => written += n,
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    // Keep draining our own inbound streams so two ranks
                    // writing to each other cannot both stall.
                    self.poll_incoming()?;
                    std::thread::yield_now();
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        self.scratch = frame;
        Ok(())
    }

    fn try_recv(&mut self) -> io::Result<Option<Frame>> {
        if self.backlog.is_empty() {
            self.poll_incoming()?;
        }
        Ok(self.backlog.pop_front())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_is_little_endian() {
        let mut out = Vec::new();
        encode_frame(0x0102_0304, &[9, 8, 7], &mut out);
        assert_eq!(out, vec![3, 0, 0, 0, 4, 3, 2, 1, 9, 8, 7]);
    }

    #[test]
    fn decoder_handles_split_input() {
        let mut bytes = Vec::new();
        encode_frame(1, b"hello", &mut bytes);
        encode_frame(2, b"", &mut bytes);
        encode_frame(3, &[0xff; 40], &mut bytes);
        let mut dec = FrameDecoder::new();
        let mut frames = Vec::new();
        for chunk in bytes.chunks(3) {
            dec.push(chunk);
            while let Some(f) = dec.next_frame() {
                frames.push(f);
            }
        }
        assert_eq!(frames.len(), 3);
        assert_eq!(
            frames[0],
            Frame {
                edge: 1,
                body: b"hello".to_vec()
            }
        );
        assert!(frames[1].body.is_empty());
        assert_eq!(frames[2].body, vec![0xff; 40]);
        assert_eq!(dec.buffered(), 0);
    }

    fn exchange(medium: Medium) {
        let mut eps = connect(medium, 3).unwrap();
        for edge in 0..200u32 {
            eps[0].send(2, edge, &edge.to_le_bytes()).unwrap();
            eps[1].send(2, 1000 + edge, &[]).unwrap();
        }
        let mut from0 = Vec::new();
        let mut from1 = Vec::new();
        while from0.len() + from1.len() < 400 {
            if let Some(f) = eps[2].try_recv().unwrap() {
                if f.edge >= 1000 {
                    from1.push(f.edge);
                } else {
                    assert_eq!(f.body, f.edge.to_le_bytes());
                    from0.push(f.edge);
                }
            }
        }
        assert_eq!(from0, (0..200).collect::<Vec<_>>());
        assert_eq!(from1, (1000..1200).collect::<Vec<_>>());
    }

    #[test]
    fn shared_queue_preserves_per_sender_order() {
        exchange(Medium::SharedQueue);
    }

    #[test]
    fn local_socket_preserves_per_sender_order() {
        exchange(Medium::LocalSocket);
    }
}
