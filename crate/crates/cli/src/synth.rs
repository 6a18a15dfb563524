//! Procedural subjects: identity is a handful of render parameters and
//! viewpoint is a render angle, so reference choice has a measurable effect
//! on how well a held-out view can be reconstructed.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use refvid_core::rng::SplitRng;
use refvid_core::view_sampler::{Candidate, Region};
use refvid_core::Tensor;
use serde::{Deserialize, Serialize};

/// Rotation per frame, in radians.
pub const TURN_PER_FRAME: f64 = PI / 8.0;

/// Captions say whether the subject starts facing the camera or away from
/// it, and which way it turns: `2 * away + turn`.
pub const CAPTIONS: usize = 4;

/// The caption for a clip starting at `theta0`; `turn` 0 turns towards
/// positive angles, 1 towards negative.
pub fn caption_for(theta0: f64, turn: usize) -> usize {
    let away = usize::from(theta0.cos() < 0.0);
    2 * away + turn % 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectParams {
    /// Clothing colours of horizontal torso bands, top to bottom, visible
    /// from every side.
    pub body: [[f64; 3]; BANDS],
    /// Colour of a panel on the back of the torso, visible only from behind.
    pub accent: [f64; 3],
    /// Body half-width as a fraction of the image width, seen from the front.
    pub width: f64,
    /// Fraction of rows taken by the head.
    pub head: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSubject {
    pub id: String,
    pub params: SubjectParams,
}

/// A labeled reference angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct View {
    pub label: &'static str,
    pub theta: f64,
}

/// Body candidate angles: a dense frontal cluster, two profiles and one
/// back view, mirroring the frontal bias of cropped references.
pub const BODY_VIEWS: [View; 14] = [
    View {
        label: "F",
        theta: 0.0,
    },
    View {
        label: "F",
        theta: 0.05,
    },
    View {
        label: "F",
        theta: -0.05,
    },
    View {
        label: "F",
        theta: 0.1,
    },
    View {
        label: "F",
        theta: -0.1,
    },
    View {
        label: "F",
        theta: 0.15,
    },
    View {
        label: "F",
        theta: -0.15,
    },
    View {
        label: "F",
        theta: 0.2,
    },
    View {
        label: "F",
        theta: -0.2,
    },
    View {
        label: "F",
        theta: 0.25,
    },
    View {
        label: "F",
        theta: -0.25,
    },
    View {
        label: "S",
        theta: FRAC_PI_2,
    },
    View {
        label: "S",
        theta: -FRAC_PI_2,
    },
    View {
        label: "B",
        theta: PI,
    },
];

/// Face candidate angles. Up and Down carry no azimuth of their own.
pub const FACE_VIEWS: [View; 5] = [
    View {
        label: "F",
        theta: 0.0,
    },
    View {
        label: "L",
        theta: -FRAC_PI_4,
    },
    View {
        label: "R",
        theta: FRAC_PI_4,
    },
    View {
        label: "U",
        theta: 0.0,
    },
    View {
        label: "D",
        theta: 0.0,
    },
];

/// Torso bands per subject.
pub const BANDS: usize = 3;

/// Skin and hair tones are shared by all subjects, so the head tells the
/// model which way a subject faces without saying who it is.
const SKIN: [f64; 3] = [0.9, 0.5, 0.2];
const HAIR: [f64; 3] = [-0.8, -0.8, -0.6];

/// Range of the lighting gain applied to everything but the background.
pub const LIGHT_RANGE: (f64, f64) = (0.5, 1.5);

/// A lighting gain drawn uniformly from [`LIGHT_RANGE`].
pub fn random_light(rng: &mut SplitRng) -> f64 {
    LIGHT_RANGE.0 + (LIGHT_RANGE.1 - LIGHT_RANGE.0) * rng.uniform()
}

fn color(rng: &mut SplitRng) -> [f64; 3] {
    [0; 3].map(|_| 2.0 * rng.uniform() - 1.0)
}

fn lerp(a: &[f64; 3], b: &[f64; 3], t: f64, ch: usize) -> f64 {
    (1.0 - t) * a[ch] + t * b[ch]
}

/// How much of the back is turned to the camera, in [0, 1].
fn back_weight(theta: f64) -> f64 {
    (-theta.cos()).max(0.0).powi(2)
}

/// How much of the face is turned to the camera, in [0, 1].
fn face_weight(theta: f64) -> f64 {
    (0.5 + 0.5 * theta.cos()).powi(2)
}

impl SyntheticSubject {
    pub fn random(id: impl Into<String>, rng: &mut SplitRng) -> Self {
        let params = SubjectParams {
            body: [0; BANDS].map(|_| color(rng)),
            accent: color(rng),
            width: 0.25 + 0.15 * rng.uniform(),
            head: 0.25 + 0.15 * rng.uniform(),
        };
        SyntheticSubject {
            id: id.into(),
            params,
        }
    }

    /// Full-body render, `channels×h×w`, at azimuth `theta` under lighting
    /// gain `light`.
    pub fn render(&self, theta: f64, light: f64, channels: usize, h: usize, w: usize) -> Tensor {
        let p = &self.params;
        let back = back_weight(theta);
        let face = face_weight(theta);
        let half = p.width * w as f64 * (1.0 - 0.35 * theta.sin().powi(2));
        let head_rows = p.head * h as f64;
        let cx = w as f64 / 2.0;
        Tensor::from_fn(&[channels, h, w], |i| {
            let x = (i % w) as f64 + 0.5;
            let y = ((i / w) % h) as f64 + 0.5;
            let ch = (i / (w * h)) % 3;
            let dx = (x - cx).abs();
            let band =
                (((y - head_rows) / (h as f64 - head_rows) * BANDS as f64) as usize).min(BANDS - 1);
            if y < head_rows {
                if dx <= 0.6 * half {
                    light * lerp(&HAIR, &SKIN, face, ch)
                } else {
                    0.0
                }
            } else if dx <= 0.5 * half {
                light * lerp(&p.body[band], &p.accent, back, ch)
            } else if dx <= half {
                light * p.body[band][ch]
            } else {
                0.0
            }
        })
    }

    /// Head close-up, `channels×h×w`, at azimuth `theta`, over the collar.
    pub fn render_face(
        &self,
        theta: f64,
        light: f64,
        channels: usize,
        h: usize,
        w: usize,
    ) -> Tensor {
        let p = &self.params;
        let face = face_weight(theta);
        let cx = w as f64 / 2.0 + 0.25 * w as f64 * theta.sin();
        Tensor::from_fn(&[channels, h, w], |i| {
            let x = (i % w) as f64 + 0.5;
            let y = ((i / w) % h) as f64 + 0.5;
            let ch = (i / (w * h)) % 3;
            if y >= 0.8 * h as f64 {
                light * p.body[0][ch]
            } else if y < 0.25 * h as f64 {
                light * HAIR[ch]
            } else if (x - cx).abs() <= 0.3 * w as f64 {
                light * lerp(&HAIR, &SKIN, face, ch)
            } else {
                0.0
            }
        })
    }

    /// A turning clip, `frames×channels×h×w`, starting at `theta0`, lit by
    /// one gain throughout.
    pub fn clip(
        &self,
        theta0: f64,
        caption: usize,
        light: f64,
        frames: usize,
        channels: usize,
        h: usize,
        w: usize,
    ) -> Tensor {
        let per = channels * h * w;
        let mut data = Vec::with_capacity(frames * per);
        for theta in frame_angles(theta0, caption, frames) {
            data.extend_from_slice(self.render(theta, light, channels, h, w).data());
        }
        Tensor::new(vec![frames, channels, h, w], data).expect("clip shape")
    }

    pub fn body_candidates(&self) -> Vec<Candidate> {
        BODY_VIEWS
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Candidate::new(format!("{}/body/{i}", self.id), v.theta, Region::Body)
                    .expect("finite angle")
            })
            .collect()
    }

    pub fn face_candidates(&self) -> Vec<Candidate> {
        FACE_VIEWS
            .iter()
            .enumerate()
            .map(|(i, v)| {
                Candidate::new(format!("{}/face/{i}", self.id), v.theta, Region::Face)
                    .expect("finite angle")
            })
            .collect()
    }
}

/// Per-frame azimuths of a clip starting at `theta0`.
pub fn frame_angles(theta0: f64, caption: usize, frames: usize) -> Vec<f64> {
    let dir = if caption.is_multiple_of(2) { 1.0 } else { -1.0 };
    (0..frames)
        .map(|f| theta0 + dir * TURN_PER_FRAME * f as f64)
        .collect()
}

/// `n` subjects from one seed, ids `s000`, `s001`, ….
pub fn subjects(n: usize, seed: u64) -> Vec<SyntheticSubject> {
    let rng = SplitRng::new(seed);
    (0..n)
        .map(|i| SyntheticSubject::random(format!("s{i:03}"), &mut rng.derive(i as u64)))
        .collect()
}
