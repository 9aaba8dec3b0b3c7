//! Threads fighting over one mutex. The holder's critical section grows
//! during the contention phase and shrinks back to nothing afterwards.

use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use clap::Parser;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 3)]
    threads: usize,
    /// Seconds of contention.
    #[arg(long, default_value_t = 30)]
    contend: u64,
    /// Quiet seconds after contention.
    #[arg(long, default_value_t = 10)]
    calm: u64,
}

fn spin(d: Duration) {
    let t = Instant::now();
    while t.elapsed() < d {
        std::hint::spin_loop();
    }
}

fn main() {
    let args = Args::parse();
    let lock = Arc::new(Mutex::new(0u64));
    let start = Instant::now();
    let contend = Duration::from_secs(args.contend);
    let end = contend + Duration::from_secs(args.calm);
    let workers: Vec<_> = (0..args.threads.max(2))
        .map(|_| {
            let lock = lock.clone();
            thread::spawn(move || loop {
                let now = start.elapsed();
                if now >= end {
                    break;
                }
                if now < contend {
                    let mut g = lock.lock().unwrap();
                    *g += 1;
                    let ramp = now.as_secs_f64() / contend.as_secs_f64();
                    spin(Duration::from_micros(200 + (800.0 * ramp) as u64));
                } else {
                    thread::sleep(Duration::from_millis(50));
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    println!("acquisitions {}", lock.lock().unwrap());
}
