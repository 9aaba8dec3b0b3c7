//! Local TCP echo round trips. Prints `latency_ms <float>` per request.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Instant;

use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 1000)]
    requests: u32,
    #[arg(long, default_value_t = 64)]
    size: usize,
}

fn serve(mut conn: TcpStream, size: usize) {
    let mut buf = vec![0u8; size];
    while conn.read_exact(&mut buf).is_ok() {
        if conn.write_all(&buf).is_err() {
            break;
        }
    }
}

fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let size = args.size.max(1);
    let server = thread::spawn(move || {
        if let Ok((conn, _)) = listener.accept() {
            serve(conn, size);
        }
    });

    let mut client = TcpStream::connect(addr)?;
    client.set_nodelay(true)?;
    let msg = vec![0x5a; size];
    let mut back = vec![0u8; size];
    let mut out = std::io::stdout().lock();
    for _ in 0..args.requests {
        let t = Instant::now();
        client.write_all(&msg)?;
        client.read_exact(&mut back)?;
        writeln!(out, "latency_ms {:.6}", t.elapsed().as_secs_f64() * 1e3)?;
    }
    drop(client);
    let _ = server.join();
    Ok(())
}
