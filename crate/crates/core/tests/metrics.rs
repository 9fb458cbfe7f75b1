use bimanip::metrics::*;
use bimanip::tasks::{PrimitiveId, TaskSpec};
use bimanip::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force DTW: every monotone path from (0,0) to the corner,
/// keeping the lowest cost and, among ties, the shortest path.
fn exhaustive_dtw(a: &[f64], b: &[f64]) -> (f64, usize) {
    fn walk(a: &[f64], b: &[f64], i: usize, j: usize, cost: f64, len: usize, best: &mut (f64, usize)) {
        let cost = cost + (a[i] - b[j]).abs();
        let len = len + 1;
        if i + 1 == a.len() && j + 1 == b.len() {
            if cost < best.0 || (cost == best.0 && len < best.1) {
                *best = (cost, len);
            }
            return;
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, cost, len, best);
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, cost, len, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, cost, len, best);
        }
    }
    let mut best = (f64::INFINITY, usize::MAX);
    walk(a, b, 0, 0, 0.0, 0, &mut best);
    best
}

fn all_sequences(max_len: usize, alphabet: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s| alphabet.iter().map(move |&v| [s.as_slice(), &[v]].concat()))
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

fn column(seq: &[f64]) -> Vec<Vec<f64>> {
    seq.iter().map(|&v| vec![v]).collect()
}

#[test]
fn dtw_matches_exhaustive_enumeration() {
    let seqs = all_sequences(5, &[0.0, 1.0, 2.0]);
    assert_eq!(seqs.len(), 3 + 9 + 27 + 81 + 243);
    let mut checked = 0;
    for a in &seqs {
        for b in &seqs {
            // full cross product over lengths up to 4, diagonal pairs at 5
            if a.len() == 5 && b.len() == 5 && a != b && !((a[0] + b[4]) as usize).is_multiple_of(7) {
                continue;
            }
            let (cost, len) = exhaustive_dtw(a, b);
            let al = dtw_alignment(&column(a), &column(b)).unwrap();
            assert_eq!((al.cost, al.length), (cost, len), "{a:?} {b:?}");
            assert_eq!(dtw_distance(&column(a), &column(b), true).unwrap(), cost / len as f64);
            checked += 1;
        }
    }
    assert!(checked > 40_000);
}

#[test]
fn dtw_matches_exhaustive_on_real_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=5);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (cost, len) = exhaustive_dtw(&a, &b);
        let al = dtw_alignment(&column(&a), &column(&b)).unwrap();
        assert!((al.cost - cost).abs() < 1e-12);
        assert_eq!(al.length, len);
    }
}

#[test]
fn dtw_examples() {
    let a = column(&[0.0, 1.0, 2.0]);
    let b = column(&[0.0, 0.0, 1.0, 2.0]);
    assert_eq!(dtw_distance(&a, &b, false).unwrap(), 0.0);
    assert_eq!(dtw_distance(&a, &a, true).unwrap(), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let x: Vec<Vec<f64>> = (0..6).map(|_| (0..21).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<Vec<f64>> = (0..6).map(|_| (0..21).map(|_| rng.random::<f64>()).collect()).collect();
        assert_eq!(dtw_distance(&x, &y, true).unwrap(), dtw_distance(&y, &x, true).unwrap());
        // warping never does worse than the identity alignment
        let identity: f64 = x
            .iter()
            .zip(&y)
            .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt())
            .sum::<f64>()
            / 6.0;
        assert!(dtw_distance(&x, &y, true).unwrap() <= identity + 1e-15);
    }
    let empty: Vec<Vec<f64>> = vec![];
    assert!(matches!(dtw_distance(&empty, &a, true), Err(Error::Contract(_))));
}

fn random_state(rng: &mut ChaCha8Rng, blocks: usize) -> Vec<f64> {
    let mut s = Vec::new();
    for _ in 0..blocks {
        s.extend((0..3).map(|_| rng.random_range(-1.0..1.0)));
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        s.extend(q.iter().map(|v| v / n));
    }
    s
}

fn naive_geodesic(p: &[f64], q: &[f64]) -> f64 {
    let np = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nq = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / (np * nq);
    2.0 * dot.abs().min(1.0).acos()
}

#[test]
fn euclidean_and_angular_match_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let t = rng.random_range(1..20);
        let pred: Vec<Vec<f64>> = (0..t).map(|_| random_state(&mut rng, 3)).collect();
        let truth: Vec<Vec<f64>> = (0..t).map(|_| random_state(&mut rng, 3)).collect();
        let mut pos = Vec::new();
        let mut ang = Vec::new();
        for (p, q) in pred.iter().zip(&truth) {
            let d = |o: usize| ((p[o] - q[o]).powi(2) + (p[o + 1] - q[o + 1]).powi(2) + (p[o + 2] - q[o + 2]).powi(2)).sqrt();
            pos.push(100.0 * (d(0) + d(7)) / 2.0);
            ang.push((naive_geodesic(&p[3..7], &q[3..7]) + naive_geodesic(&p[10..14], &q[10..14])) / 2.0);
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt())
        };
        let (em, es) = euclidean_error(&pred, &truth).unwrap();
        let (nm, ns) = stats(&pos);
        assert!((em - nm).abs() < 1e-12 && (es - ns).abs() < 1e-12);
        let (am, as_) = angular_error(&pred, &truth).unwrap();
        let (nm, ns) = stats(&ang);
        assert!((am - nm).abs() < 1e-12 && (as_ - ns).abs() < 1e-12);
    }
}

#[test]
fn closed_form_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let truth: Vec<Vec<f64>> = (0..10).map(|_| random_state(&mut rng, 3)).collect();
    assert_eq!(euclidean_error(&truth, &truth).unwrap(), (0.0, 0.0));
    assert_eq!(angular_error(&truth, &truth).unwrap(), (0.0, 0.0));

    let shifted: Vec<Vec<f64>> = truth
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for o in [0, 7] {
                s[o] += 0.03;
                s[o + 1] += 0.04;
            }
            s
        })
        .collect();
    let (m, sd) = euclidean_error(&shifted, &truth).unwrap();
    assert!((m - 5.0).abs() < 1e-12 && sd < 1e-12);

    let flipped: Vec<Vec<f64>> = truth
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for k in (3..7).chain(10..14) {
                s[k] = -s[k];
            }
            s
        })
        .collect();
    assert_eq!(angular_error(&flipped, &truth).unwrap(), (0.0, 0.0));

    // a 90° yaw applied to the identity orientation
    let c = std::f64::consts::FRAC_PI_4.cos();
    let mut ident = vec![0.0; 21];
    let mut yawed = vec![0.0; 21];
    for o in [3, 10, 17] {
        ident[o] = 1.0;
        yawed[o] = c;
        yawed[o + 3] = c;
    }
    let (m, sd) = angular_error(&vec![yawed; 5], &vec![ident; 5]).unwrap();
    assert!((m - std::f64::consts::FRAC_PI_2).abs() < 1e-12 && sd < 1e-12);
}

#[test]
fn contract_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<Vec<f64>> = (0..3).map(|_| random_state(&mut rng, 3)).collect();
    assert!(matches!(euclidean_error(&a[..2], &a), Err(Error::Contract(_))));
    let mut bad = a.clone();
    bad[1][3] = 2.0;
    assert!(matches!(angular_error(&bad, &a), Err(Error::Contract(_))));
    assert!(matches!(success_rate(&[]), Err(Error::Contract(_))));
    assert_eq!(success_rate(&[true, true]).unwrap(), 1.0);
    assert_eq!(success_rate(&[true, false, false, true]).unwrap(), 0.5);
}

#[test]
fn report_breakdown_aggregates_to_overall_mean() {
    let task = TaskSpec::table_lift();
    let names: Vec<String> = task.primitives.iter().map(|p| p.name.to_string()).collect();
    let mut acc = EvalAccumulator::new(names, true);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for r in 0..4 {
        let truth: Vec<Vec<f64>> = (0..70).map(|_| random_state(&mut rng, 3)).collect();
        let pred: Vec<Vec<f64>> = (0..70).map(|_| random_state(&mut rng, 3)).collect();
        acc.add(&pred, &truth, &task.labels(), r % 2 == 0).unwrap();
    }
    acc.add_outcome(false);
    let report = acc.finish("ResInt Multi").unwrap();
    assert_eq!(report.rollouts, 5);
    assert_eq!(report.success_rate, 0.4);
    assert_eq!(report.per_primitive.len(), 6);
    let total: usize = report.per_primitive.iter().map(|b| b.steps).sum();
    assert_eq!(total, 280);
    let weighted: f64 = report.per_primitive.iter().map(|b| b.euclidean_cm_mean * b.steps as f64).sum::<f64>() / total as f64;
    assert!((weighted - report.euclidean_cm_mean).abs() < 1e-9);
    assert_eq!(report.per_primitive[5].steps, 40);
    assert!(report.dtw > 0.0 && report.euclidean_cm_std > 0.0);

    let wrong = vec![PrimitiveId::new(7).unwrap(); 70];
    let t: Vec<Vec<f64>> = (0..70).map(|_| random_state(&mut rng, 3)).collect();
    assert!(acc.add(&t, &t, &wrong, true).is_err());

    let mut buf = Vec::new();
    write_reports_csv(std::slice::from_ref(&report), &mut buf).unwrap();
    let back = read_reports_csv(buf.as_slice()).unwrap();
    let mut expected = report.clone();
    expected.per_primitive.clear();
    assert_eq!(back, vec![expected]);

    let mut bd = Vec::new();
    write_breakdown_csv(std::slice::from_ref(&report), &mut bd).unwrap();
    assert_eq!(String::from_utf8(bd).unwrap().lines().count(), 7);

    let table = EvalReport::table(std::slice::from_ref(&report));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("Model"));
    assert!(lines[2].starts_with("ResInt Multi") && lines[2].ends_with("40%"));
    assert_eq!(report.breakdown_table().lines().count(), 7);
}
