//! Acceptance suite: one PASS/FAIL line per criterion, then a single verdict.
//!

mod common;

use std::sync::Arc;
use std::time::Instant;

use coopmcts::episode::{run_episode, Policy};
use coopmcts::experiment::{run_experiment, to_csv, CellSpec, ExperimentSpec, PriorSet};
use coopmcts::features::build_features;
use coopmcts::gmm::{fit_em, EmOptions, FactoredActionGmm, Gmm1D, WeightedSamples};
use coopmcts::mcts::{search, uniform_speed_error, ActionPrior, Integration, SearchConfig, Strategy, Tree};
use coopmcts::mdn::{conv2d_reflect, forward, load_weights, nnelu, save_weights, MdnMetadata, MdnWeights, Planes};
use coopmcts::par::par_map;
use coopmcts::scene::{load_scenario, JointAction, Scenario, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let n = n.next_multiple_of(2);
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

fn gmm_recovery() -> Outcome {
    let start = Instant::now();
    let (phi, mu, var) = ([0.3, 0.7], [-2.0, 2.0], [0.25, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let normals: Vec<Normal<f64>> = (0..2).map(|k| Normal::new(mu[k], f64::sqrt(var[k])).unwrap()).collect();
    let xs: Vec<f64> = (0..10_000)
        .map(|_| {
            let k = usize::from(rng.random::<f64>() >= phi[0]);
            normals[k].sample(&mut rng)
        })
        .collect();
    let fit = fit_em(&WeightedSamples::uniform(xs), 2, 7, &EmOptions::default()).map_err(|e| e.to_string())?;
    let mut g = fit.gmm;
    g.canonicalize();
    let errs = (0..2).fold((0.0f64, 0.0f64, 0.0f64), |acc, k| {
        (
            acc.0.max((g.phi()[k] - phi[k]).abs()),
            acc.1.max((g.mu()[k] - mu[k]).abs()),
            acc.2.max((g.var()[k] - var[k]).abs()),
        )
    });
    let sd = g.var().iter().cloned().fold(0.0, f64::max).sqrt();
    let mass = simpson(|x| g.pdf(x), g.mu()[0] - 20.0 * sd, g.mu()[1] + 20.0 * sd, 200_000);
    let secs = start.elapsed().as_secs_f64();
    check(
        errs.0 <= 0.05 && errs.1 <= 0.1 && errs.2 <= 0.15 && (mass - 1.0).abs() <= 1e-6 && secs < 5.0,
        format!(
            "max |dphi| {:.4}, |dmu| {:.4}, |dvar| {:.4}; pdf mass {mass:.9}; {secs:.2} s",
            errs.0, errs.1, errs.2
        ),
    )
}

fn heads_valid() -> Outcome {
    if nnelu(0.0) != 1.0 {
        return Err(format!("nnelu(0) = {}", nnelu(0.0)));
    }
    let mut min = f64::INFINITY;
    for i in 0..=100_000 {
        min = min.min(nnelu(-50.0 + i as f64 * 1e-3));
    }
    if !(min > 0.0) {
        return Err(format!("nnelu minimum {min} on [-50, 50]"));
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst_sum = 0.0f64;
    let mut min_var = f64::INFINITY;
    for i in 0..100u64 {
        let meta = common::small_meta(2 + (i % 2) as usize);
        let path = dir.path().join(format!("w{i}.mdnw"));
        save_weights(&MdnWeights::random(meta.clone(), i).map_err(|e| e.to_string())?, &path).map_err(|e| e.to_string())?;
        let w = load_weights(&path).map_err(|e| e.to_string())?;
        let p = forward(&w, &common::random_input(&meta, 1000 + i, 1 + (i % 8) as usize)).map_err(|e| e.to_string())?;
        for s in &p.slots {
            for axis in [&s.lon, &s.lat] {
                worst_sum = worst_sum.max((axis.phi().iter().sum::<f64>() - 1.0).abs());
                min_var = axis.var().iter().cloned().fold(min_var, f64::min);
            }
        }
    }
    check(
        worst_sum <= 1e-6 && min_var > 0.0,
        format!("nnelu min {min:.3e}; 100 files: max |sum phi - 1| {worst_sum:.2e}, min var {min_var:.3e}"),
    )
}

fn backprop_mean() -> Outcome {
    let s = common::scene(1, vec![common::agent(10.0, 0.0, 5.0)], vec![]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..300);
        let returns: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.2 { -1000.0 } else { 0.0 } + rng.random_range(-50.0..5.0))
            .collect();
        let mut t = Tree::new(s.clone(), false);
        t.add_child(0, JointAction::zeros(1), 0.0, s.clone(), true);
        for (i, &g) in returns.iter().enumerate() {
            t.backpropagate(&[(0, 0)], g, (i > 0).then_some(1));
        }
        let mean = returns.iter().sum::<f64>() / n as f64;
        let q = t.nodes[0].children[0].q;
        worst = worst.max((q - mean).abs() / mean.abs().max(1.0));
    }
    check(worst <= 1e-9, format!("max relative error {worst:.2e} over 1000 sequences"))
}

fn conv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 200 {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (c, oc) = (rng.random_range(1..=3), rng.random_range(1..=4));
        let (k, stride, pad) = (rng.random_range(1..=5), rng.random_range(1..=3), rng.random_range(0..=3));
        if pad >= h || pad >= w || h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        let x = Planes::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect());
        let kern: Vec<f32> = (0..oc * c * k * k).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let got = conv2d_reflect(&x, &kern, oc, k, k, &bias, stride, pad).map_err(|e| e.to_string())?;
        let (want, mass) = common::brute_conv(&x, &kern, oc, k, &bias, stride, pad);
        if got.data.len() != want.len() {
            return Err(format!("{h}x{w} k{k} s{stride} p{pad}: {} outputs, expected {}", got.data.len(), want.len()));
        }
        for ((g, v), m) in got.data.iter().zip(&want).zip(&mass) {
            worst = worst.max((*g as f64 - v).abs() / m.max(1.0));
        }
        done += 1;
    }
    check(worst <= 1e-6, format!("200 planes, max error / max(1, sum |products|) = {worst:.2e}"))
}

fn search_sanity() -> Outcome {
    let sc = load_scenario(common::scenarios_dir().join("empty-road.json")).map_err(|e| e.to_string())?;
    let a = &sc.scene.agents[0];
    let b = &sc.search.action_bounds;
    let expected = uniform_speed_error(a.v, a.v_desired, b.dv_min, b.dv_max);
    let start = Instant::now();
    let seeds: Vec<u64> = (0..50).collect();
    let errors = par_map(&seeds, |&seed| {
        let cfg = SearchConfig { iterations: 500, seed, ..sc.search.clone() };
        search(&sc.scene, &[], &cfg, &sc.reward, None).map(|r| ((a.v + r.selected_action[0].dv_lon).max(0.0) - a.v_desired).abs())
    });
    let secs = start.elapsed().as_secs_f64();
    let errors: Vec<f64> = errors.into_iter().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let better = errors.iter().filter(|&&e| e < expected).count();
    check(
        better >= 45 && secs < 30.0,
        format!("{better}/50 seeds below the uniform expectation {expected:.3}; {secs:.2} s"),
    )
}

/// Rule-based merge oracle: every agent heads for its desired lane centre and
/// speed; when two agents want the same lane and are level, the one ahead
/// speeds up, the other brakes and the outsider waits before moving over.
fn merge_oracle(history: &[Scene]) -> Vec<Option<FactoredActionGmm>> {
    let s = history.last().expect("non-empty history");
    let centre = |g: usize| s.world.lane(s.agents[g].lane_desired).map_or(0.0, |l| l.center_offset);
    let settled = |g: usize| (s.agents[g].y_lat - centre(g)).abs() < 0.05;
    (0..s.agent_count())
        .map(|i| {
            let a = &s.agents[i];
            let yc = centre(i);
            let mut dv = (a.v_desired - a.v).clamp(-3.0, 3.0);
            let mut dy = (yc - a.y_lat).clamp(-1.75, 1.75);
            for (j, o) in s.agents.iter().enumerate() {
                if j == i || o.lane_desired != a.lane_desired || (settled(i) && settled(j)) {
                    continue;
                }
                let dx = a.x_lon - o.x_lon;
                if dx.abs() < a.length + 2.0 {
                    let ahead = dx > 0.0 || (dx == 0.0 && i < j);
                    dv = if ahead { 3.0 } else { -3.0 };
                    if (a.y_lat - yc).abs() > 1.0 {
                        dy = 0.0;
                    }
                }
            }
            Some(FactoredActionGmm {
                lon: Gmm1D::single(dv, 1e-4).expect("valid spike"),
                lat: Gmm1D::single(dy, 1e-4).expect("valid spike"),
            })
        })
        .collect()
}

fn success_count(sc: &Scenario, iterations: usize, oracle: bool) -> Result<usize, String> {
    let seeds: Vec<u64> = (0..50).collect();
    let cfg = SearchConfig {
        iterations,
        strategy: if oracle { Strategy::Mdn } else { Strategy::Baseline },
        ..sc.search.clone()
    };
    let prior: &dyn ActionPrior = &merge_oracle;
    let runs = par_map(&seeds, |&seed| {
        let policy = Policy::Search(oracle.then_some(prior));
        run_episode(sc, seed, &cfg, policy).map(|e| e.success())
    });
    let mut n = 0;
    for r in runs {
        n += usize::from(r.map_err(|e| e.to_string())?);
    }
    Ok(n)
}

fn bias_effect() -> Outcome {
    let sc = load_scenario(common::scenarios_dir().join("merge.json")).map_err(|e| e.to_string())?;
    let b200 = success_count(&sc, 200, false)?;
    let o200 = success_count(&sc, 200, true)?;
    let b8k = success_count(&sc, 8000, false)?;
    let o8k = success_count(&sc, 8000, true)?;
    let gap = |o: usize, b: usize| 2.0 * (o as f64 - b as f64);
    check(
        gap(o200, b200) >= 5.0 && gap(o8k, b8k) <= 5.0,
        format!(
            "200 it: oracle {o200}/50 vs baseline {b200}/50 ({:+.0} pp); 8000 it: {o8k}/50 vs {b8k}/50 ({:+.0} pp)",
            gap(o200, b200),
            gap(o8k, b8k)
        ),
    )
}

fn latency() -> Outcome {
    let w = MdnWeights::random(MdnMetadata::new(2), 3).map_err(|e| e.to_string())?;
    let sc = load_scenario(common::scenarios_dir().join("bottleneck.json")).map_err(|e| e.to_string())?;
    let x = build_features(std::slice::from_ref(&sc.scene), 0, &w.metadata().features);
    for _ in 0..20 {
        forward(&w, &x).map_err(|e| e.to_string())?;
    }
    let mut times: Vec<f64> = (0..1000)
        .map(|_| {
            let t = Instant::now();
            let p = forward(&w, &x);
            let ms = t.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(p).map(|_| ms)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    times.sort_by(f64::total_cmp);
    let median = 0.5 * (times[499] + times[500]);
    check(median <= 5.0, format!("median {median:.3} ms, p90 {:.3} ms over 1000 calls", times[899]))
}

fn determinism() -> Outcome {
    let spec = ExperimentSpec {
        scenarios: ["merge.json", "follow.json"].iter().map(|f| common::scenarios_dir().join(f)).collect(),
        runs: 8,
        baseline_runs: 8,
        iterations: vec![20, 60],
        cells: vec![CellSpec::baseline(), CellSpec::mdn(2, Integration::Root, true)],
        base_seed: 99,
        weights: Default::default(),
    };
    let scenarios = spec.load_scenarios().map_err(|e| e.to_string())?;
    let mut priors = PriorSet::new();
    let prior: Arc<dyn ActionPrior> = Arc::new(merge_oracle);
    priors.insert(2, prior);
    let run = || run_experiment(&spec, &scenarios, &priors).map(|t| to_csv(&t)).map_err(|e| e.to_string());
    let first = run()?;
    let second = run()?;
    #[cfg(feature = "parallel")]
    let others = [1usize, 2, 4]
        .iter()
        .map(|&t| coopmcts::par::with_threads(t, run))
        .collect::<Result<Vec<_>, _>>()?;
    #[cfg(not(feature = "parallel"))]
    let others: Vec<String> = Vec::new();
    let same = first == second && others.iter().all(|o| *o == first);
    check(
        same,
        format!("{} CSV lines identical across 2 reruns and {} thread counts", first.lines().count(), others.len()),
    )
}

/// Writes past the test harness capture so the report shows in every run.
fn report(line: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{line}");
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("gmm-recovery", gmm_recovery),
        ("nnelu-and-heads", heads_valid),
        ("backprop-mean", backprop_mean),
        ("conv-oracle", conv_oracle),
        ("search-sanity", search_sanity),
        ("bias-effect", bias_effect),
        ("inference-latency", latency),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Ok(detail) => report(&format!("PASS {name}: {detail}")),
            Err(detail) => {
                report(&format!("FAIL {name}: {detail}"));
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
