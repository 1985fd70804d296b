#![allow(dead_code)]

use std::path::PathBuf;

use coopmcts::features::{FeatureConfig, FeatureTensor, GridSpec, ScalarFeatures, SCALAR_LEN, SLOTS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use coopmcts::mdn::{MdnMetadata, Planes};
use coopmcts::scene::{AgentState, LaneSpec, Obstacle, Scene, World};

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn bundled_scenarios() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    v.sort();
    v
}

pub fn lanes(n: usize) -> Vec<LaneSpec> {
    (0..n)
        .map(|i| LaneSpec {
            id: i,
            center_offset: 3.5 * i as f64,
            width: 3.5,
        })
        .collect()
}

pub fn agent(x: f64, y: f64, v: f64) -> AgentState {
    AgentState {
        x_lon: x,
        y_lat: y,
        heading: 0.0,
        v,
        a: 0.0,
        length: 4.5,
        width: 1.8,
        v_desired: v,
        lane_desired: 0,
        oncoming: false,
    }
}

pub fn scene(lane_count: usize, agents: Vec<AgentState>, obstacles: Vec<Obstacle>) -> Scene {
    Scene::new(World::new(lanes(lane_count), 1000.0, obstacles), agents).unwrap()
}

/// Network metadata with a 16 x 32 grid so forward passes stay cheap.
pub fn small_meta(k: usize) -> MdnMetadata {
    let mut m = MdnMetadata::new(k);
    m.features = FeatureConfig {
        grid: GridSpec {
            lon_cells: 16,
            lat_cells: 32,
            lon_res: 8.0,
            lat_res: 0.8,
        },
        ..FeatureConfig::default()
    };
    m
}

/// Direct reflect-padded cross-correlation in f64. Returns the output and,
/// per output value, the sum of absolute products for error scaling.
pub fn brute_conv(x: &Planes, w: &[f32], oc: usize, k: usize, b: &[f32], stride: usize, pad: usize) -> (Vec<f64>, Vec<f64>) {
    let mirror = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };
    let oh = (x.height + 2 * pad - k) / stride + 1;
    let ow = (x.width + 2 * pad - k) / stride + 1;
    let mut out = Vec::new();
    let mut mass = Vec::new();
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = b[o] as f64;
                let mut m = (b[o] as f64).abs();
                for c in 0..x.channels {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = mirror((oy * stride + ky) as isize - pad as isize, x.height);
                            let xx = mirror((ox * stride + kx) as isize - pad as isize, x.width);
                            let p = w[((o * x.channels + c) * k + ky) * k + kx] as f64 * x.at(c, y, xx) as f64;
                            s += p;
                            m += p.abs();
                        }
                    }
                }
                out.push(s);
                mass.push(m);
            }
        }
    }
    (out, mass)
}

/// Uniform random network input with the first `agents` slots occupied.
pub fn random_input(meta: &coopmcts::mdn::MdnMetadata, seed: u64, agents: usize) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = meta.features.grid;
    let grid = (0..2 * g.cells_per_channel()).map(|_| rng.random_range(-1.0f32..=1.0)).collect();
    let slot_agents: Vec<Option<usize>> = (0..SLOTS).map(|s| (s < agents).then_some(s)).collect();
    FeatureTensor {
        grid_spec: g,
        grid,
        scalars: ScalarFeatures {
            values: (0..SCALAR_LEN).map(|_| rng.random_range(-1.0f32..=1.0)).collect(),
            mask: slot_agents.iter().map(Option::is_some).collect(),
            slot_agents,
        },
    }
}
