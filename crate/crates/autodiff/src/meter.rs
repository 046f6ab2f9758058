//! Per-thread accounting of live tensor storage.
//!
//! Every [`NdArray`](crate::NdArray) buffer registers its byte size on
//! allocation and releases it on drop. The high-water mark is what the codec
//! reports as activation memory.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn acquire(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn release(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes of tensor storage currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(|l| l.get())
}

/// Highest value of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(|p| p.get())
}

/// Restart peak tracking from the current live total.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NdArray;

    #[test]
    fn tracks_allocation_and_release() {
        reset_peak();
        let base = live_bytes();
        {
            let a = NdArray::<f32>::zeros(&[256]);
            assert_eq!(live_bytes(), base + 1024);
            let b = a.clone();
            // clones share storage
            assert_eq!(live_bytes(), base + 1024);
            drop(b);
        }
        assert_eq!(live_bytes(), base);
        assert!(peak_bytes() >= base + 1024);
    }
}
