//! Procedural walking benchmark.
//!
//! Each sequence is a character walking across a flat room scattered
//! with box obstacles. The root follows a smooth path with one or two
//! mid-sequence turns, the feet alternate planted ground contacts with
//! airborne swings, and the arms counter-swing. Obstacles are placed
//! after the path is drawn so the walker never intersects them, and
//! the whole room (floor plus obstacle surfaces) is emitted as a point
//! cloud. Coordinates are z-up meters; the floor sits at z = 0.
//!
//! Turns are scheduled strictly inside the sequence, so an observer of
//! any prefix cannot tell where the walker will head next; future foot
//! plants reveal it. That property is what makes contact conditioning
//! genuinely informative on this data.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::fnv1a;
use crate::io::formats::write_sequence;
use crate::types::{MotionSequence, SceneCloud, Skeleton};

/// Generation knobs; defaults give the benchmark used throughout the
/// test suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Frames per sequence.
    pub frames: usize,
    /// Side length of the square room, meters.
    pub extent: f64,
    /// Floor grid spacing, meters.
    pub floor_spacing: f64,
    /// Obstacle count bounds, inclusive.
    pub obstacles_min: usize,
    pub obstacles_max: usize,
    /// Walking speed, meters per second.
    pub walk_speed: f64,
    /// Full gait cycle length, frames.
    pub gait_period: usize,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frames: 300,
            extent: 8.0,
            floor_spacing: 0.1,
            obstacles_min: 2,
            obstacles_max: 4,
            walk_speed: 0.8,
            gait_period: 30,
            fps: 30.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn check(&self) -> Result<()> {
        if self.frames < 2 * self.gait_period || self.gait_period < 4 {
            return Err(Error::InvalidConfig(
                "sequence must cover at least two gait cycles".into(),
            ));
        }
        if self.extent <= 1.0 || self.floor_spacing <= 0.0 || self.floor_spacing > 0.2 {
            return Err(Error::InvalidConfig(
                "room extent must exceed 1 m and floor spacing lie in (0, 0.2]".into(),
            ));
        }
        if self.obstacles_min > self.obstacles_max {
            return Err(Error::InvalidConfig("obstacle bounds are inverted".into()));
        }
        if self.walk_speed <= 0.0 || self.fps <= 0.0 {
            return Err(Error::InvalidConfig("speed and fps must be positive".into()));
        }
        Ok(())
    }

    /// Builds a spec from `key=value` pairs, defaulting absent keys and
    /// leaving unrelated keys in place.
    pub fn from_kv(kv: &mut crate::io::config_file::KvConfig) -> Result<Self> {
        let d = Self::default();
        let spec = Self {
            frames: kv.take_or("frames", d.frames)?,
            extent: kv.take_or("extent", d.extent)?,
            floor_spacing: kv.take_or("floor_spacing", d.floor_spacing)?,
            obstacles_min: kv.take_or("obstacles_min", d.obstacles_min)?,
            obstacles_max: kv.take_or("obstacles_max", d.obstacles_max)?,
            walk_speed: kv.take_or("walk_speed", d.walk_speed)?,
            gait_period: kv.take_or("gait_period", d.gait_period)?,
            fps: kv.take_or("fps", d.fps)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        spec.check()?;
        Ok(spec)
    }
}

/// Axis-aligned box sitting on the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxObstacle {
    pub center: [f64; 2],
    pub half: [f64; 2],
    pub height: f64,
}

impl BoxObstacle {
    /// Interior test, boundary excluded.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (p[0] - self.center[0]).abs() < self.half[0]
            && (p[1] - self.center[1]).abs() < self.half[1]
            && p[2] > 0.0
            && p[2] < self.height
    }

    /// Chebyshev-style margin from a ground point to the box footprint.
    fn footprint_clearance(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.center[0]).abs() - self.half[0];
        let dy = (y - self.center[1]).abs() - self.half[1];
        dx.max(dy)
    }
}

/// One generated sequence with the obstacle layout kept for auditing.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub scene: SceneCloud,
    pub motion: MotionSequence,
    pub obstacles: Vec<BoxObstacle>,
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut bytes = [0u8; 16];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..].copy_from_slice(&index.to_le_bytes());
    fnv1a(&bytes)
}

/// Body proportions shared by every generated character. Pelvis height
/// also sets where the floor-relative chain hangs.
const PELVIS_HEIGHT: f64 = 0.90;
const HIP_WIDTH: f64 = 0.10;
const SHOULDER_WIDTH: f64 = 0.20;
const FOOT_LIFT: f64 = 0.38;
const FOOT_REST: f64 = 0.02;
const STEP_WIDTH: f64 = 0.11;

/// Generates sequence `index` of the dataset deterministically; the
/// result does not depend on which other sequences are generated.
pub fn generate_sequence(spec: &SynthSpec, index: usize) -> Result<GeneratedSequence> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, index as u64));
    let frames = spec.frames;
    let dt = 1.0 / spec.fps;
    let half_room = spec.extent / 2.0;
    let margin = 0.8;

    // heading schedule: one or two sharp turns strictly inside the
    // sequence, each spread over a short ramp
    let turn_count = rng.random_range(1..=2usize);
    let mut turns: Vec<(usize, f64)> = (0..turn_count)
        .map(|_| {
            let frame = rng.random_range(frames / 4..3 * frames / 4);
            let mag = rng.random_range(0.9..1.9);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            (frame, sign * mag)
        })
        .collect();
    turns.sort_by_key(|(f, _)| *f);
    let ramp = 20usize.min(spec.gait_period);

    let mut heading = rng.random_range(0.0..2.0 * PI);
    let start = [
        rng.random_range(-half_room * 0.4..half_room * 0.4),
        rng.random_range(-half_room * 0.4..half_room * 0.4),
    ];

    // integrate the root ground path
    let mut path = Array2::zeros((frames, 2));
    let mut headings = vec![0.0; frames];
    let mut pos = start;
    for t in 0..frames {
        path[[t, 0]] = pos[0];
        path[[t, 1]] = pos[1];
        headings[t] = heading;

        let mut rate = 0.0;
        for (f, mag) in &turns {
            if t >= *f && t < f + ramp {
                rate += mag / ramp as f64;
            }
        }
        // steer back toward the room center near the walls
        let next = [
            pos[0] + spec.walk_speed * dt * heading.cos(),
            pos[1] + spec.walk_speed * dt * heading.sin(),
        ];
        if next[0].abs() > half_room - margin || next[1].abs() > half_room - margin {
            let to_center = (-pos[1]).atan2(-pos[0]);
            let diff = wrap_angle(to_center - heading);
            rate += diff.clamp(-0.12, 0.12);
        }
        heading += rate;
        pos[0] += spec.walk_speed * dt * heading.cos();
        pos[1] += spec.walk_speed * dt * heading.sin();
    }

    let motion = build_walker(spec, &path, &headings, &mut rng)?;
    let obstacles = place_obstacles(spec, &path, &mut rng)?;
    let scene = build_scene(spec, &obstacles)?;
    Ok(GeneratedSequence {
        scene,
        motion,
        obstacles,
    })
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    if a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// Foot trajectory for one side: planted at a fixed ground point for
/// half of each gait cycle, then swinging to the next plant along a
/// smooth lifted arc. `phase_offset` is 0 for the left foot and half a
/// cycle for the right.
fn foot_track(
    path: &Array2<f64>,
    headings: &[f64],
    period: usize,
    phase_offset: usize,
    side: f64,
    frames: usize,
) -> Vec<[f64; 3]> {
    let half = period / 2;
    let plant_for = |cycle: isize| -> [f64; 2] {
        // plant under the root at the middle of that stance interval
        let mid = cycle * period as isize + phase_offset as isize + half as isize / 2;
        let t = mid.clamp(0, frames as isize - 1) as usize;
        let nx = -headings[t].sin();
        let ny = headings[t].cos();
        [
            path[[t, 0]] + side * STEP_WIDTH * nx,
            path[[t, 1]] + side * STEP_WIDTH * ny,
        ]
    };

    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let local = (t + period - phase_offset) % period;
        let cycle = ((t as isize) - phase_offset as isize).div_euclid(period as isize);
        if local < half {
            // stance: frozen on the ground
            let p = plant_for(cycle);
            out.push([p[0], p[1], FOOT_REST]);
        } else {
            // swing: previous plant to the next one
            let from = plant_for(cycle);
            let to = plant_for(cycle + 1);
            let u = (local - half) as f64 / half as f64;
            let s = u * u * (3.0 - 2.0 * u);
            out.push([
                from[0] + (to[0] - from[0]) * s,
                from[1] + (to[1] - from[1]) * s,
                FOOT_REST + FOOT_LIFT * (PI * u).sin(),
            ]);
        }
    }
    out
}

fn build_walker(
    spec: &SynthSpec,
    path: &Array2<f64>,
    headings: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<MotionSequence> {
    let skeleton = Skeleton::default_humanoid();
    let frames = spec.frames;
    let period = spec.gait_period;
    let mut data = Array3::zeros((frames, skeleton.joint_count(), 3));

    let left_foot = foot_track(path, headings, period, 0, 1.0, frames);
    let right_foot = foot_track(path, headings, period, period / 2, -1.0, frames);
    // small per-character style variation
    let bob_amp = rng.random_range(0.012..0.022);
    let arm_amp = rng.random_range(0.35..0.5);
    let lean = rng.random_range(0.01..0.03);

    for t in 0..frames {
        let phase = 2.0 * PI * (t % period) as f64 / period as f64;
        let fwd = [headings[t].cos(), headings[t].sin()];
        let lat = [-headings[t].sin(), headings[t].cos()];
        let rx = path[[t, 0]];
        let ry = path[[t, 1]];
        let pelvis_z = PELVIS_HEIGHT + bob_amp * (2.0 * phase).sin();

        let mut set = |j: usize, p: [f64; 3]| {
            data[[t, j, 0]] = p[0];
            data[[t, j, 1]] = p[1];
            data[[t, j, 2]] = p[2];
        };

        // torso column with a slight forward lean
        set(0, [rx, ry, pelvis_z]);
        set(1, [rx + lean * fwd[0], ry + lean * fwd[1], pelvis_z + 0.15]);
        set(2, [rx + 2.0 * lean * fwd[0], ry + 2.0 * lean * fwd[1], pelvis_z + 0.30]);
        set(3, [rx + 2.0 * lean * fwd[0], ry + 2.0 * lean * fwd[1], pelvis_z + 0.45]);
        set(4, [rx + lean * fwd[0], ry + lean * fwd[1], pelvis_z + 0.58]);

        // arms: pendulum swing opposite the same-side leg
        for (side, sh, el, wr, leg_phase) in
            [(1.0, 5usize, 6usize, 7usize, PI), (-1.0, 8, 9, 10, 0.0)]
        {
            let sx = rx + side * SHOULDER_WIDTH * lat[0] + 2.0 * lean * fwd[0];
            let sy = ry + side * SHOULDER_WIDTH * lat[1] + 2.0 * lean * fwd[1];
            let sz = pelvis_z + 0.42;
            let swing = arm_amp * (phase + leg_phase).sin();
            set(sh, [sx, sy, sz]);
            set(
                el,
                [
                    sx + 0.26 * swing.sin() * fwd[0],
                    sy + 0.26 * swing.sin() * fwd[1],
                    sz - 0.26 * swing.cos(),
                ],
            );
            let wrist_swing = 1.25 * swing;
            set(
                wr,
                [
                    sx + (0.26 * swing.sin() + 0.24 * wrist_swing.sin()) * fwd[0],
                    sy + (0.26 * swing.sin() + 0.24 * wrist_swing.sin()) * fwd[1],
                    sz - 0.26 * swing.cos() - 0.24 * wrist_swing.cos(),
                ],
            );
        }

        // legs driven by the foot tracks
        for (side, hip, knee, ankle, foot_j, toe, track) in [
            (1.0, 11usize, 12usize, 13usize, 14usize, 15usize, &left_foot),
            (-1.0, 16, 17, 18, 19, 20, &right_foot),
        ] {
            let hp = [
                rx + side * HIP_WIDTH * lat[0],
                ry + side * HIP_WIDTH * lat[1],
                pelvis_z - 0.05,
            ];
            let f = track[t];
            let ankle_p = [f[0] - 0.04 * fwd[0], f[1] - 0.04 * fwd[1], f[2] + 0.09];
            let bend = 0.06 + 0.5 * (f[2] - FOOT_REST);
            let knee_p = [
                (hp[0] + ankle_p[0]) / 2.0 + bend * fwd[0],
                (hp[1] + ankle_p[1]) / 2.0 + bend * fwd[1],
                (hp[2] + ankle_p[2]) / 2.0,
            ];
            set(hip, hp);
            set(knee, knee_p);
            set(ankle, ankle_p);
            set(foot_j, f);
            set(toe, [f[0] + 0.12 * fwd[0], f[1] + 0.12 * fwd[1], f[2] * 0.9]);
        }
    }
    MotionSequence::new(data, skeleton)
}

fn place_obstacles(
    spec: &SynthSpec,
    path: &Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BoxObstacle>> {
    let count = rng.random_range(spec.obstacles_min..=spec.obstacles_max);
    let half_room = spec.extent / 2.0;
    // wide enough that swinging feet stay well outside contact range of
    // the obstacle faces
    let clearance = 0.6;
    let mut out = Vec::with_capacity(count);
    'place: for _ in 0..count {
        for _attempt in 0..400 {
            let half = [rng.random_range(0.15..0.45), rng.random_range(0.15..0.45)];
            let center = [
                rng.random_range(-half_room + half[0]..half_room - half[0]),
                rng.random_range(-half_room + half[1]..half_room - half[1]),
            ];
            let candidate = BoxObstacle {
                center,
                half,
                height: rng.random_range(0.4..1.3),
            };
            let clear = path
                .rows()
                .into_iter()
                .all(|r| candidate.footprint_clearance(r[0], r[1]) > clearance);
            if clear {
                out.push(candidate);
                continue 'place;
            }
        }
        return Err(Error::InfeasibleSpec(format!(
            "could not place {count} obstacles clear of the walk in a {} m room",
            spec.extent
        )));
    }
    Ok(out)
}

fn build_scene(spec: &SynthSpec, obstacles: &[BoxObstacle]) -> Result<SceneCloud> {
    let mut pts: Vec<[f64; 3]> = Vec::new();
    let per_side = (spec.extent / spec.floor_spacing).round() as usize + 1;
    let half = spec.extent / 2.0;
    for ix in 0..per_side {
        for iy in 0..per_side {
            let x = -half + ix as f64 * spec.floor_spacing;
            let y = -half + iy as f64 * spec.floor_spacing;
            // leave floor out of obstacle footprints; the box top covers it
            if obstacles.iter().any(|o| o.footprint_clearance(x, y) < 0.0) {
                continue;
            }
            pts.push([x, y, 0.0]);
        }
    }
    let step = spec.floor_spacing;
    for o in obstacles {
        let (nx, ny, nz) = (
            (2.0 * o.half[0] / step).ceil() as usize + 1,
            (2.0 * o.half[1] / step).ceil() as usize + 1,
            (o.height / step).ceil() as usize + 1,
        );
        for ix in 0..nx {
            let x = o.center[0] - o.half[0] + 2.0 * o.half[0] * ix as f64 / (nx - 1) as f64;
            for iy in 0..ny {
                let y = o.center[1] - o.half[1] + 2.0 * o.half[1] * iy as f64 / (ny - 1) as f64;
                pts.push([x, y, o.height]); // top face
            }
            for iz in 1..nz {
                let z = o.height * iz as f64 / (nz - 1) as f64;
                pts.push([x, o.center[1] - o.half[1], z]);
                pts.push([x, o.center[1] + o.half[1], z]);
            }
        }
        for iy in 0..ny {
            let y = o.center[1] - o.half[1] + 2.0 * o.half[1] * iy as f64 / (ny - 1) as f64;
            for iz in 1..nz {
                let z = o.height * iz as f64 / (nz - 1) as f64;
                pts.push([o.center[0] - o.half[0], y, z]);
                pts.push([o.center[0] + o.half[0], y, z]);
            }
        }
    }
    let mut arr = Array2::zeros((pts.len(), 3));
    for (i, p) in pts.iter().enumerate() {
        for c in 0..3 {
            arr[[i, c]] = p[c];
        }
    }
    SceneCloud::new(arr)
}

/// Generates `train + test` sequences and writes them under
/// `out/train/seq_NNN` and `out/test/seq_NNN`.
pub fn generate_dataset(
    spec: &SynthSpec,
    train: usize,
    test: usize,
    out: &Path,
) -> Result<()> {
    if train + test == 0 {
        return Err(Error::EmptyInput("dataset needs at least one sequence"));
    }
    for i in 0..train + test {
        let seq = generate_sequence(spec, i)?;
        let (split, local) = if i < train {
            ("train", i)
        } else {
            ("test", i - train)
        };
        let dir = out.join(split).join(format!("seq_{local:03}"));
        write_sequence(&dir, &seq.scene, &seq.motion)?;
    }
    Ok(())
}
