use mxt_core::bench::{
    doubling_ratios, median, render_table, run_scan_bench, BenchConfig, BenchRow,
    EQUALITY_TOLERANCE,
};
use mxt_core::Error;

fn small() -> BenchConfig {
    BenchConfig {
        lens: vec![32, 64],
        states: vec![2, 4],
        chunks: vec![1, 7, 64],
        repeats: 1,
        channels: 3,
        seed: 1,
    }
}

#[test]
fn every_row_is_checked_and_reported() {
    let mut seen = 0;
    let rows = run_scan_bench(&small(), |_| seen += 1).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 4);
    assert_eq!(seen, rows.len());
    for r in &rows {
        assert!(r.max_abs_diff <= EQUALITY_TOLERANCE, "{r:?}");
        assert!(0.0 <= r.ms_best && r.ms_best <= r.ms_per_iter);
        if r.chunk.is_none() {
            assert_eq!(r.max_abs_diff, 0.0);
        }
    }
}

#[test]
fn zero_sizes_are_rejected() {
    for cfg in [
        BenchConfig {
            repeats: 0,
            ..small()
        },
        BenchConfig {
            channels: 0,
            ..small()
        },
        BenchConfig {
            lens: vec![0],
            ..small()
        },
        BenchConfig {
            chunks: vec![0],
            ..small()
        },
    ] {
        assert!(matches!(
            run_scan_bench(&cfg, |_| {}),
            Err(Error::Config(_))
        ));
    }
}

/// `best` is the fastest repeat; the median is set far from it so tests can
/// tell which one is used.
fn row(len: usize, state: usize, chunk: Option<usize>, best: f64) -> BenchRow {
    BenchRow {
        len,
        state,
        chunk,
        ms_per_iter: 10.0 * best,
        ms_best: best,
        max_abs_diff: 0.0,
    }
}

#[test]
fn doubling_ratios_pair_sequential_rows_only() {
    let rows = [
        row(100, 8, None, 1.0),
        row(100, 8, Some(4), 5.0),
        row(200, 8, None, 2.5),
        row(200, 8, Some(4), 9.0),
        row(400, 8, None, 4.5),
        row(200, 16, None, 3.0),
        row(300, 8, None, 1.0),
    ];
    assert_eq!(doubling_ratios(&rows), vec![(8, 100, 2.5), (8, 200, 1.8)]);
}

#[test]
fn table_has_header_and_one_line_per_row() {
    let t = render_table(&[row(1024, 8, None, 0.5), row(1024, 8, Some(64), 0.25)]);
    let lines: Vec<Vec<&str>> = t.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(lines[0], ["L", "N", "chunk", "ms/iter", "best"]);
    assert_eq!(lines[1], ["1024", "8", "sequential", "5.0000", "0.5000"]);
    assert_eq!(lines[2], ["1024", "8", "64", "2.5000", "0.2500"]);
}

#[test]
fn median_of_odd_even_and_empty() {
    assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    assert!(median(&mut []).is_nan());
}
