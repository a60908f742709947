//! Small integer helpers shared by the simulation modules.

/// ceil(log2 x) for x >= 1, with ceil(log2 1) = 0.
pub fn ceil_log2(x: u64) -> u32 {
    assert!(x >= 1);
    64 - (x - 1).leading_zeros()
}

/// Bits needed to write any value in `0..=max`, at least 1.
pub fn bits_for(max: u64) -> u32 {
    (64 - max.leading_zeros()).max(1)
}

/// log2 n as f64, floored at 1 so formulas stay finite on tiny graphs.
pub fn log2n(n: usize) -> f64 {
    (n.max(2) as f64).log2()
}

/// ceil(k · log2 log2 max(x, 4)): the length of every "log log" loop.
pub fn loglog_iterations(k: f64, x: usize) -> usize {
    let x = x.max(4) as f64;
    (k * x.log2().log2()).ceil().max(1.0) as usize
}

pub fn ceil_div(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logs() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(1 << 16), 16);
        assert_eq!(bits_for(0), 1);
        assert_eq!(bits_for(255), 8);
        assert_eq!(bits_for(256), 9);
        // log2 log2 16 = 2
        assert_eq!(loglog_iterations(4.0, 16), 8);
        assert_eq!(loglog_iterations(4.0, 2), 4);
    }
}
