//! Process CPU and memory readings from `/proc` (Linux only; `None` elsewhere).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessStats {
    /// User + system CPU time consumed so far.
    pub cpu_seconds: f64,
    pub rss_bytes: u64,
    pub mem_total_bytes: u64,
    pub cpus: usize,
}

impl ProcessStats {
    pub fn memory_percent(&self) -> f64 {
        if self.mem_total_bytes == 0 {
            return 0.0;
        }
        self.rss_bytes as f64 / self.mem_total_bytes as f64 * 100.0
    }
}

/// CPU utilisation between two readings, as a percentage of all cores.
pub fn cpu_percent(before: &ProcessStats, after: &ProcessStats, wall_seconds: f64) -> f64 {
    if wall_seconds <= 0.0 {
        return 0.0;
    }
    let busy = (after.cpu_seconds - before.cpu_seconds).max(0.0);
    busy / (wall_seconds * after.cpus.max(1) as f64) * 100.0
}

// Linux reports CPU times in clock ticks; USER_HZ is 100 on every mainstream build.
const CLOCK_TICKS: f64 = 100.0;
const PAGE_SIZE: u64 = 4096;

fn parse_stat(stat: &str) -> Option<f64> {
    // Fields after the parenthesised command name; utime and stime are 14th and 15th overall.
    let rest = &stat[stat.rfind(')')? + 2..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    let utime: f64 = fields.get(11)?.parse().ok()?;
    let stime: f64 = fields.get(12)?.parse().ok()?;
    Some((utime + stime) / CLOCK_TICKS)
}

fn parse_meminfo_total(meminfo: &str) -> Option<u64> {
    let line = meminfo.lines().find(|l| l.starts_with("MemTotal:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

pub fn current() -> Option<ProcessStats> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let meminfo = std::fs::read_to_string("/proc/meminfo").ok()?;
    let resident_pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(ProcessStats {
        cpu_seconds: parse_stat(&stat)?,
        rss_bytes: resident_pages * PAGE_SIZE,
        mem_total_bytes: parse_meminfo_total(&meminfo)?,
        cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_proc_formats() {
        let stat = "1234 (my (odd) proc) S 1 1234 1234 0 -1 4194560 100 0 0 0 250 50 0 0 20 0 4 0 1000 0 0";
        assert_eq!(parse_stat(stat), Some(3.0));
        assert_eq!(parse_meminfo_total("MemTotal:       16384 kB\nMemFree: 1 kB\n"), Some(16384 * 1024));
    }

    #[test]
    fn cpu_percent_scales_by_cores() {
        let a = ProcessStats { cpu_seconds: 1.0, rss_bytes: 0, mem_total_bytes: 100, cpus: 2 };
        let b = ProcessStats { cpu_seconds: 2.0, ..a };
        assert!((cpu_percent(&a, &b, 1.0) - 50.0).abs() < 1e-12);
        assert_eq!(cpu_percent(&a, &b, 0.0), 0.0);
    }

    #[test]
    #[cfg(target_os = "linux")]
    fn reads_own_process() {
        let s = current().expect("procfs");
        assert!(s.rss_bytes > 0 && s.mem_total_bytes > s.rss_bytes);
    }
}
