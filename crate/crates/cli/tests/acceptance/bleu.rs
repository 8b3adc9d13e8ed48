//! BLEU against a brute-force exact-rational oracle: 25 random pairs and
//! three hand fixtures within 1e-12, `bleu(x, [x]) = 1` exactly, the
//! clipping fixture at exactly 1/3, under five seconds.

use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recipegen::eval::{bleu, corpus_bleu, modified_precision, tokenize, EvalPair, Smoothing};

use crate::{ensure, Outcome};

const TOL: f64 = 1e-12;

fn rat(n: usize, d: usize) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn to_f64(r: &BigRational) -> f64 {
    let n: f64 = r.numer().to_string().parse().unwrap();
    let d: f64 = r.denom().to_string().parse().unwrap();
    n / d
}

fn occurrences(tokens: &[&str], gram: &[&str]) -> usize {
    if gram.len() > tokens.len() {
        return 0;
    }
    (0..=tokens.len() - gram.len()).filter(|&i| &tokens[i..i + gram.len()] == gram).count()
}

/// Clipped matches and total by scanning every candidate position.
fn oracle_counts(cand: &[&str], refs: &[Vec<&str>], n: usize) -> (usize, usize) {
    if cand.len() < n {
        return (0, 0);
    }
    let total = cand.len() + 1 - n;
    let mut clipped = 0;
    for i in 0..total {
        let gram = &cand[i..i + n];
        if (0..i).all(|j| &cand[j..j + n] != gram) {
            let best = refs.iter().map(|r| occurrences(r, gram)).max().unwrap_or(0);
            clipped += occurrences(cand, gram).min(best);
        }
    }
    (clipped, total)
}

fn oracle(pairs: &[(Vec<&str>, Vec<Vec<&str>>)], smoothing: Smoothing) -> (Vec<BigRational>, f64) {
    let (mut m, mut t) = ([0usize; 4], [0usize; 4]);
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        for n in 1..=4 {
            let (a, b) = oracle_counts(cand, refs, n);
            m[n - 1] += a;
            t[n - 1] += b;
        }
        c += cand.len();
        let mut best = refs[0].len();
        for rr in refs {
            let (d, bd) = (rr.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && rr.len() < best) {
                best = rr.len();
            }
        }
        r += best;
    }
    let p: Vec<BigRational> = (0..4)
        .map(|k| match (m[k], t[k], smoothing) {
            (0, t, Smoothing::AddOne) => rat(1, t + 1),
            (_, 0, _) => rat(0, 1),
            (m, t, _) => rat(m, t),
        })
        .collect();
    let score = if c == 0 || p.iter().any(|x| *x == rat(0, 1)) {
        0.0
    } else {
        let product = p.iter().fold(rat(1, 1), |acc, x| acc * x);
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * to_f64(&product).powf(0.25)
    };
    (p, score)
}

const WORDS: [&str; 5] = ["salt", "oil", "the", "mix", "bake"];

fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let len = rng.gen_range(1..=max_len);
    (0..len).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

pub fn run() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..25 {
        let cand = random_text(&mut rng, 12);
        let refs: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| random_text(&mut rng, 12)).collect();
        let pair = EvalPair::new(cand.clone(), refs.clone()).map_err(|e| e.to_string())?;
        let toks = (tokenize(&cand), refs.iter().map(|r| tokenize(r)).collect::<Vec<_>>());
        for s in [Smoothing::AddOne, Smoothing::None] {
            let got = bleu(&pair, 4, s);
            let (p, want) = oracle(std::slice::from_ref(&toks), s);
            for (a, b) in got.precisions.iter().zip(&p) {
                ensure!((a - to_f64(b)).abs() < TOL, "pair {case} ({s}): p {a} vs oracle {b}");
            }
            let err = (got.bleu - want).abs();
            ensure!(err < TOL, "pair {case} ({s}): {} vs oracle {want}", got.bleu);
            worst = worst.max(err);
        }
    }

    // fixture 1: clipping
    let (m, total) = modified_precision(&tokenize("the the the"), &[tokenize("the cat")], 1);
    ensure!(rat(m as usize, total as usize) == rat(1, 3), "clipping gives {m}/{total}");
    let p1 = bleu(&EvalPair::new("the the the", vec!["the cat".into()]).unwrap(), 4, Smoothing::AddOne).precisions[0];
    ensure!(p1 == 1.0 / 3.0, "clipping p1 = {p1}");
    // fixture 2: short candidate, BP = exp(1 − 6/3)
    let short = bleu(
        &EvalPair::new("the cat sat", vec!["the cat sat on the mat".into()]).unwrap(),
        4,
        Smoothing::AddOne,
    );
    ensure!((short.bleu - (-1f64).exp()).abs() < TOL, "short candidate {} vs e^-1", short.bleu);
    // fixture 3: pooled counts p = 4/5, 2/3, 1, 1 with c = 5, r = 6
    let pairs = [
        EvalPair::new("a b c", vec!["a b c d".into()]).unwrap(),
        EvalPair::new("x y", vec!["x z".into()]).unwrap(),
    ];
    let pooled = corpus_bleu(&pairs, 4, Smoothing::AddOne).map_err(|e| e.to_string())?.bleu;
    let hand = (1.0f64 - 6.0 / 5.0).exp() * (8.0f64 / 15.0).powf(0.25);
    ensure!((pooled - hand).abs() < TOL, "pooled {pooled} vs {hand}");

    for _ in 0..200 {
        let x = random_text(&mut rng, 20);
        let s = bleu(&EvalPair::new(x.clone(), vec![x.clone()]).unwrap(), 4, Smoothing::AddOne).bleu;
        ensure!(s == 1.0, "bleu({x:?}, [same]) = {s}");
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s (limit 5s)");
    Ok(format!("25 random pairs x 2 smoothings, max |err| {worst:.1e}; 3 fixtures exact; 200 self-scores = 1"))
}
