//! Aggregation of per-seed traces onto a common evaluation grid.

/// Aligns gap traces on the union of their NF breakpoints, carries each
/// trace's last value forward (step interpolation), and returns the
/// per-grid-point mean. Traces that start later than a grid point
/// contribute their first value.
pub fn aggregate_gap_traces(traces: &[Vec<(u64, f64)>]) -> Vec<(u64, f64)> {
    assert!(!traces.is_empty(), "need at least one trace");
    let mut grid: Vec<u64> = traces
        .iter()
        .flat_map(|t| t.iter().map(|&(nf, _)| nf))
        .collect();
    grid.sort_unstable();
    grid.dedup();

    let mut cursors = vec![0usize; traces.len()];
    let mut out = Vec::with_capacity(grid.len());
    for &nf in &grid {
        let mut sum = 0.0;
        for (trace, cursor) in traces.iter().zip(cursors.iter_mut()) {
            while *cursor + 1 < trace.len() && trace[*cursor + 1].0 <= nf {
                *cursor += 1;
            }
            // Step interpolation: the value in force at `nf`.
            let value = if trace[*cursor].0 <= nf || *cursor == 0 {
                trace[*cursor].1
            } else {
                trace[*cursor - 1].1
            };
            sum += value;
        }
        out.push((nf, sum / traces.len() as f64));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trace_is_identity() {
        let trace = vec![(0, 1.0), (5, 0.5), (9, 0.25)];
        assert_eq!(aggregate_gap_traces(&[trace.clone()]), trace);
    }

    #[test]
    fn constant_traces_average() {
        let a = vec![(0, 1.0), (4, 1.0)];
        let b = vec![(0, 3.0), (6, 3.0)];
        let agg = aggregate_gap_traces(&[a, b]);
        assert_eq!(agg, vec![(0, 2.0), (4, 2.0), (6, 2.0)]);
    }

    #[test]
    fn shorter_traces_carry_forward() {
        let a = vec![(0, 4.0), (2, 2.0)];
        let b = vec![(0, 8.0), (2, 6.0), (10, 0.0)];
        let agg = aggregate_gap_traces(&[a, b]);
        // At nf = 10 the first trace still contributes its last value 2.0.
        assert_eq!(agg.last(), Some(&(10, 1.0)));
        assert_eq!(agg.len(), 3);
    }
}
