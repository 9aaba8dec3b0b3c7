//! Busy threads that never block; pin the process to one core to build a
//! run queue (`taskset -c 0 busy-loop --threads 4`).

use std::thread;
use std::time::{Duration, Instant};

use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 30)]
    seconds: u64,
}

fn main() {
    let args = Args::parse();
    let until = Instant::now() + Duration::from_secs(args.seconds);
    let workers: Vec<_> = (0..args.threads)
        .map(|_| {
            thread::spawn(move || {
                let mut x = 0u64;
                while Instant::now() < until {
                    x = x.wrapping_mul(6364136223846793005).wrapping_add(1);
                }
                x
            })
        })
        .collect();
    for w in workers {
        std::hint::black_box(w.join().unwrap());
    }
}
