use std::collections::{BTreeMap, BTreeSet};

use kprism_core::{DeviceRef, MetricKind};

use crate::index::MetricIndex;

/// Fraction of `device` sectors issued by threads of `tgids`, per wall
/// second inside the optional inclusive window. Seconds in which nobody
/// touched the device are left out.
pub fn device_share(
    index: &MetricIndex,
    device: DeviceRef,
    tgids: &BTreeSet<u32>,
    window: Option<(u64, u64)>,
) -> Vec<(u64, f64)> {
    let res = device.to_string();
    let mut per_second: BTreeMap<u64, (u128, u128)> = BTreeMap::new();
    for (key, points) in index.series() {
        if key.metric != MetricKind::SectorCount || key.res != res {
            continue;
        }
        let member = tgids.contains(&key.tgid);
        for (&ts, &v) in points {
            if window.is_some_and(|(a, b)| ts < a || ts > b) {
                continue;
            }
            let slot = per_second.entry(ts).or_default();
            slot.1 += u128::from(v);
            if member {
                slot.0 += u128::from(v);
            }
        }
    }
    per_second
        .into_iter()
        .filter(|(_, (_, total))| *total > 0)
        .map(|(ts, (mine, total))| (ts, mine as f64 / total as f64))
        .collect()
}
