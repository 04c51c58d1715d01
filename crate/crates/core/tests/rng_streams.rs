//! Statistical integration tests for the counter-based noise streams: moment
//! checks at Monte Carlo scale, independence across replicas and substreams,
//! and equality of the keyed one-shot draws with the sequential front-end.

use linresp_core::rng::{
    gaussian_increment, initial_point, sample_v, stream_rng, ReplicaStreams, StreamKey, Substream,
};
use rand_chacha::rand_core::RngCore;

#[test]
fn increment_moments_match_gaussian_law() {
    let n = 2_000_000usize;
    let h = 0.04f64;
    let mut streams = ReplicaStreams::new(11, 0);
    let sqrt_h = h.sqrt();
    let mut dw = [0.0f64];
    let (mut s1, mut s2, mut s4) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        streams.next_gaussian_increment(sqrt_h, &mut dw);
        s1 += dw[0];
        s2 += dw[0] * dw[0];
        s4 += dw[0].powi(4);
    }
    let nf = n as f64;
    let mean = s1 / nf;
    let m2 = s2 / nf;
    let m4 = s4 / nf;
    // mean: SE = sqrt(h/n); m2: SE = h sqrt(2/n); m4: SE = 3 h^2 sqrt(96/9/n).
    assert!(
        mean.abs() <= 4.0 * (h / nf).sqrt(),
        "mean {mean} exceeds 4 SE"
    );
    assert!(
        (m2 / h - 1.0).abs() <= 0.01,
        "E[dW^2]/h = {} not within 1%",
        m2 / h
    );
    assert!(
        (m4 / (3.0 * h * h) - 1.0).abs() <= 0.02,
        "E[dW^4]/(3h^2) = {} not within 2%",
        m4 / (3.0 * h * h)
    );
}

#[test]
fn replica_streams_are_uncorrelated() {
    let n = 1_000_000usize;
    let mut a = ReplicaStreams::new(5, 0);
    let mut b = ReplicaStreams::new(5, 1);
    let (mut xa, mut xb) = ([0.0f64], [0.0f64]);
    let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        a.next_gaussian_increment(1.0, &mut xa);
        b.next_gaussian_increment(1.0, &mut xb);
        sa += xa[0];
        sb += xb[0];
        sab += xa[0] * xb[0];
        saa += xa[0] * xa[0];
        sbb += xb[0] * xb[0];
    }
    let nf = n as f64;
    let cov = sab / nf - (sa / nf) * (sb / nf);
    let corr = cov / ((saa / nf - (sa / nf).powi(2)).sqrt() * (sbb / nf - (sb / nf).powi(2)).sqrt());
    assert!(
        corr.abs() <= 4.0 / nf.sqrt(),
        "cross-replica correlation {corr} exceeds 4/sqrt(n)"
    );
}

#[test]
fn substreams_of_one_replica_are_uncorrelated() {
    let n = 1_000_000usize;
    let mut g = stream_rng(5, 0, Substream::GaussW);
    let mut v = stream_rng(5, 0, Substream::AuxV);
    let (mut sab, mut saa, mut sbb) = (0.0f64, 0.0, 0.0);
    for _ in 0..n {
        // Center raw words to zero-mean +-1 signs of their top bit.
        let a = if g.next_u64() >> 63 == 1 { 1.0 } else { -1.0 };
        let b = if v.next_u64() >> 63 == 1 { 1.0 } else { -1.0 };
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    let corr = sab / (saa.sqrt() * sbb.sqrt());
    assert!(
        corr.abs() <= 4.0 / (n as f64).sqrt(),
        "cross-substream correlation {corr} exceeds 4/sqrt(n)"
    );
}

#[test]
fn keyed_draws_match_sequential_front_end() {
    let (seed, replica, d, h) = (42u64, 3u64, 2usize, 0.09f64);
    let mut streams = ReplicaStreams::new(seed, replica);
    let sqrt_h = h.sqrt();
    let mut seq_dw = vec![0.0f64; d];
    let mut seq_v = vec![0.0f64; d * d];
    let mut key_dw = vec![0.0f64; d];
    let mut key_v = vec![0.0f64; d * d];
    for step in 0..50u64 {
        streams.next_gaussian_increment(sqrt_h, &mut seq_dw);
        streams.next_v(h, d, &mut seq_v);
        gaussian_increment(
            &StreamKey {
                seed,
                replica,
                step,
                substream: Substream::GaussW,
            },
            h,
            &mut key_dw,
        );
        sample_v(
            &StreamKey {
                seed,
                replica,
                step,
                substream: Substream::AuxV,
            },
            h,
            d,
            &mut key_v,
        );
        assert_eq!(seq_dw, key_dw, "Gaussian draw differs at step {step}");
        assert_eq!(seq_v, key_v, "V draw differs at step {step}");
    }
}

#[test]
fn initial_points_are_uniform() {
    let n = 1_000_000usize;
    let mut x = [0.0f64];
    let (mut sum, mut lo, mut hi) = (0.0f64, 1.0f64, 0.0f64);
    for replica in 0..n as u64 {
        initial_point(5, replica, &mut x);
        assert!(
            (0.0..1.0).contains(&x[0]),
            "initial point {} outside [0,1)",
            x[0]
        );
        sum += x[0];
        lo = lo.min(x[0]);
        hi = hi.max(x[0]);
    }
    let nf = n as f64;
    let mean = sum / nf;
    let se = (1.0 / 12.0 / nf).sqrt();
    assert!(
        (mean - 0.5).abs() <= 4.0 * se,
        "initial-point mean {mean} not within 4 SE of 0.5"
    );
    assert!(lo < 1e-3 && hi > 1.0 - 1e-3, "range [{lo}, {hi}] too narrow");
}

#[test]
fn v_matrix_signs_are_balanced_and_antisymmetric() {
    let n = 1_000_000usize;
    let h = 0.02f64;
    let mut streams = ReplicaStreams::new(9, 0);
    let mut v = [0.0f64; 4];
    let mut sign_sum = 0.0f64;
    for _ in 0..n {
        streams.next_v(h, 2, &mut v);
        assert_eq!(v[0], -h);
        assert_eq!(v[3], -h);
        assert_eq!(v[1], -v[2]);
        assert_eq!(v[2].abs(), h);
        sign_sum += v[2].signum();
    }
    let bal = sign_sum / n as f64;
    assert!(
        bal.abs() <= 4.0 / (n as f64).sqrt(),
        "V sign balance {bal} exceeds 4/sqrt(n)"
    );
}
