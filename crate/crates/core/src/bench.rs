//! Depth + flow rendering throughput.

use crate::camera::{CameraIntrinsics, CameraPose};
use crate::error::{Error, Result};
use crate::flow::{reprojection_flow_into, FlowScratch};
use crate::math::Vec3;
use crate::render::{ray_depth_into, DepthImage, RenderScratch};
use crate::scene::{generate_scene, GenConfig, Scene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub height: usize,
    pub width: usize,
    pub threads: usize,
    pub primitives: usize,
    /// Frames rendered per worker.
    pub frames_per_thread: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            height: 48,
            width: 64,
            threads: 8,
            primitives: 100,
            frames_per_thread: 2000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub frames: usize,
    pub seconds: f64,
    pub frames_per_sec: f64,
    /// Cores the OS reports; more threads than this only time-slice.
    pub available_cores: usize,
}

/// A scene with exactly `n` primitives drawn from the default generator,
/// none of them swallowing a benchmark camera pose.
pub fn benchmark_scene(n: usize, seed: u64) -> Result<Scene> {
    let mut cfg = GenConfig::default();
    cfg.density = 1.5 * n as f64 / cfg.bounds().area_xy();
    for s in seed..seed + 64 {
        let mut scene = generate_scene(s, &cfg)?;
        scene
            .primitives
            .retain(|p| (0..9).all(|lane| (0..160).all(|k| p.signed_distance(pose_at(k, lane).position) > 0.05)));
        if scene.primitives.len() >= n {
            scene.primitives.truncate(n);
            return Ok(scene);
        }
    }
    Err(Error::Generation(format!("could not draw {n} primitives")))
}

/// Camera path through the scene: a line along x at flight height,
/// advancing 0.2 m and turning slightly per frame.
fn pose_at(k: usize, lane: usize) -> CameraPose {
    let x = -16.0 + 0.2 * (k % 160) as f64;
    let y = -6.0 + 1.5 * (lane % 9) as f64;
    CameraPose::new(Vec3::new(x, y, 1.5), 0.02 * (k % 50) as f64 - 0.5)
}

/// Renders depth and reprojection flow for `frames_per_thread` frames on
/// each of `threads` workers and reports the aggregate rate.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.threads == 0 || cfg.frames_per_thread == 0 {
        return Err(Error::contract("benchmark needs at least one thread and one frame"));
    }
    let intr = CameraIntrinsics::new(cfg.width, cfg.height, 90.0, 30.0)?;
    let scene = benchmark_scene(cfg.primitives, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Training(format!("thread pool: {e}")))?;
    let worker = |lane: usize| -> Result<()> {
        let mut rs = RenderScratch::default();
        let mut fs = FlowScratch::default();
        let mut prev = DepthImage::uniform(intr, pose_at(0, lane), intr.depth_far as f32);
        let mut curr = prev.clone();
        let mut flow = vec![[0.0f32; 2]; intr.pixels()];
        ray_depth_into(&scene, prev.pose, &intr, &mut rs, &mut prev.values)?;
        for k in 1..=cfg.frames_per_thread {
            curr.pose = pose_at(k, lane);
            ray_depth_into(&scene, curr.pose, &intr, &mut rs, &mut curr.values)?;
            reprojection_flow_into(&prev, prev.pose, curr.pose, &intr, &mut fs, &mut flow)?;
            std::mem::swap(&mut prev, &mut curr);
        }
        std::hint::black_box(&flow);
        Ok(())
    };
    let start = Instant::now();
    pool.install(|| (0..cfg.threads).into_par_iter().map(worker).collect::<Result<Vec<()>>>())?;
    let seconds = start.elapsed().as_secs_f64();
    let frames = cfg.threads * cfg.frames_per_thread;
    Ok(BenchReport {
        config: *cfg,
        frames,
        seconds,
        frames_per_sec: frames as f64 / seconds,
        available_cores: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    })
}
