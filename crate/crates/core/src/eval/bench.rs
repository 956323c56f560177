use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::sce::{sce_loss, LossNorm};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub batch: usize,
    /// Speakers per mix `M`.
    pub speakers: usize,
    pub embed_dim: usize,
    /// Smallest `T·F`; the grid is `n, 2n, 4n`.
    pub bins: usize,
    pub reps: usize,
    /// Smallest `T·F` for the pairwise affinity kernel, if timed.
    pub affinity_bins: Option<usize>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch: 8,
            speakers: 2,
            embed_dim: 40,
            bins: 40 * 257,
            reps: 20,
            affinity_bins: Some(1024),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchPoint {
    pub bins: usize,
    pub embed_dim: usize,
    /// Wall time per forward+backward evaluation, in seconds.
    pub times: Vec<f64>,
}

impl BenchPoint {
    pub fn median(&self) -> f64 {
        let mut t = self.times.clone();
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub loss: Vec<BenchPoint>,
    pub affinity: Vec<BenchPoint>,
}

/// Ratios of consecutive medians.
pub fn scaling_ratios(points: &[BenchPoint]) -> Vec<f64> {
    points.windows(2).map(|w| w[1].median() / w[0].median()).collect()
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut s = String::from("kernel\tTF\tE\tmedian_s\tratio\n");
        for (name, pts) in [("sce", &self.loss), ("affinity", &self.affinity)] {
            let ratios = scaling_ratios(pts);
            for (i, p) in pts.iter().enumerate() {
                let r = if i == 0 { "-".to_string() } else { format!("{:.3}", ratios[i - 1]) };
                s.push_str(&format!("{name}\t{}\t{}\t{:.6}\t{r}\n", p.bins, p.embed_dim, p.median()));
            }
        }
        s
    }
}

fn random_labels(rows: usize, m: usize, rng: &mut impl Rng) -> Vec<f32> {
    let mut y = vec![-1.0; rows * m];
    for r in 0..rows {
        y[r * m + rng.random_range(0..m)] = 1.0;
    }
    y
}

struct LossCase {
    v_i: Tensor,
    v_o: Tensor,
    y: Tensor,
}

impl LossCase {
    fn new(batch: usize, bins: usize, m: usize, e: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(LossCase {
            v_i: Tensor::from_fn([batch, bins, 1, e], |_| rng.random_range(-1.0..1.0)).with_grad(),
            v_o: Tensor::from_fn([batch, m, e], |_| rng.random_range(-1.0..1.0)).with_grad(),
            y: Tensor::new([batch, bins, 1, m], random_labels(batch * bins, m, rng))?,
        })
    }

    fn run(&self) -> Result<()> {
        let mut tape = Tape::new();
        let a = tape.leaf(&self.v_i);
        let b = tape.leaf(&self.v_o);
        let l = sce_loss(&mut tape, a, b, &self.y, LossNorm::Sum)?;
        tape.backward(l)?;
        std::hint::black_box(tape.grad(a));
        Ok(())
    }
}

struct AffinityCase {
    v: Tensor,
    y: Tensor,
}

impl AffinityCase {
    fn new(bins: usize, m: usize, e: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(AffinityCase {
            v: Tensor::from_fn([bins, e], |_| rng.random_range(-1.0..1.0)).with_grad(),
            y: Tensor::new([bins, m], random_labels(bins, m, rng))?,
        })
    }

    fn run(&self) -> Result<()> {
        let mut tape = Tape::new();
        let a = tape.leaf(&self.v);
        let at = tape.transpose(a)?;
        let vv = tape.matmul(a, at)?;
        let yv = tape.constant(self.y.clone());
        let yt = tape.transpose(yv)?;
        let yy = tape.matmul(yv, yt)?;
        let d = tape.sub(vv, yy)?;
        let sq = tape.mul(d, d)?;
        let l = tape.sum(sq)?;
        tape.backward(l)?;
        std::hint::black_box(tape.grad(a));
        Ok(())
    }
}

/// Runs every case once untimed, then `reps` rounds that time each case in
/// turn, so slow drift in machine load hits all grid points alike.
fn time_rounds<C>(cases: &[C], run: impl Fn(&C) -> Result<()>, reps: usize) -> Result<Vec<Vec<f64>>> {
    let mut times = vec![Vec::with_capacity(reps); cases.len()];
    for rep in 0..=reps {
        for (case, t) in cases.iter().zip(times.iter_mut()) {
            let start = Instant::now();
            run(case)?;
            if rep > 0 {
                t.push(start.elapsed().as_secs_f64());
            }
        }
    }
    Ok(times)
}

/// Times `reps` forward+backward passes of the SCE loss on random
/// embeddings of `B × TF × E` (one untimed warm-up first).
pub fn time_sce_loss(batch: usize, bins: usize, m: usize, e: usize, reps: usize, rng: &mut impl Rng) -> Result<BenchPoint> {
    let case = LossCase::new(batch, bins, m, e, rng)?;
    let times = time_rounds(&[case], |c| c.run(), reps)?.remove(0);
    Ok(BenchPoint {
        bins,
        embed_dim: e,
        times,
    })
}

/// Times a pairwise-affinity objective `‖V Vᵀ − Y Yᵀ‖²` on one mix, whose
/// cost grows with the square of the bin count.
pub fn time_affinity(bins: usize, m: usize, e: usize, reps: usize, rng: &mut impl Rng) -> Result<BenchPoint> {
    let case = AffinityCase::new(bins, m, e, rng)?;
    let times = time_rounds(&[case], |c| c.run(), reps)?.remove(0);
    Ok(BenchPoint {
        bins,
        embed_dim: e,
        times,
    })
}

fn points(sizes: &[usize], e: usize, times: Vec<Vec<f64>>) -> Vec<BenchPoint> {
    sizes
        .iter()
        .zip(times)
        .map(|(&bins, times)| BenchPoint {
            bins,
            embed_dim: e,
            times,
        })
        .collect()
}

/// SCE loss timings at `T·F ∈ {n, 2n, 4n}` and, optionally, the affinity
/// kernel under the same doubling. Grid points are timed round-robin.
pub fn bench_loss(config: &BenchConfig) -> Result<BenchReport> {
    if config.batch == 0 || config.speakers == 0 || config.embed_dim == 0 || config.bins == 0 || config.reps == 0 {
        return Err(Error::invalid("benchmark sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (m, e) = (config.speakers, config.embed_dim);
    let sizes: Vec<usize> = [1, 2, 4].iter().map(|s| config.bins * s).collect();
    let cases = sizes
        .iter()
        .map(|&n| LossCase::new(config.batch, n, m, e, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let loss = points(&sizes, e, time_rounds(&cases, LossCase::run, config.reps)?);
    let affinity = match config.affinity_bins {
        Some(n) => {
            let sizes: Vec<usize> = [1, 2, 4].iter().map(|s| n * s).collect();
            let cases = sizes
                .iter()
                .map(|&n| AffinityCase::new(n, m, e, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            points(&sizes, e, time_rounds(&cases, AffinityCase::run, config.reps)?)
        }
        None => Vec::new(),
    };
    Ok(BenchReport { loss, affinity })
}
