//! One thread writing and syncing a file in a loop.

use std::fs::OpenOptions;
use std::io::{Seek, Write};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 30)]
    seconds: u64,
    #[arg(long, default_value_t = 1 << 20)]
    chunk: usize,
}

fn main() -> std::io::Result<()> {
    let args = Args::parse();
    let mut f = OpenOptions::new()
        .create(true)
        .truncate(true)
        .write(true)
        .open(&args.path)?;
    let buf = vec![0xa5u8; args.chunk];
    let until = Instant::now() + Duration::from_secs(args.seconds);
    let mut written = 0u64;
    while Instant::now() < until {
        f.write_all(&buf)?;
        f.sync_data()?;
        written += buf.len() as u64;
        // Keep the file bounded.
        if f.stream_position()? >= 256 << 20 {
            f.set_len(0)?;
            f.rewind()?;
        }
    }
    println!("bytes {written}");
    Ok(())
}
