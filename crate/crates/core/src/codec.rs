//! Fixed pixel↔latent maps standing in for a learned autoencoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rectified_flow::LatentVideo;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyCodec {
    /// The latent is the pixel grid.
    #[default]
    Identity,
    /// 2×2 mean pooling; decoding repeats each latent value over its block.
    AvgPool2,
}

impl ToyCodec {
    pub fn latent_dims(self, pixel_dims: [usize; 4]) -> Result<[usize; 4]> {
        let [f, c, h, w] = pixel_dims;
        match self {
            ToyCodec::Identity => Ok(pixel_dims),
            ToyCodec::AvgPool2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Config(format!(
                        "avg-pool-2 needs even height and width, got {h}x{w}"
                    )));
                }
                Ok([f, c, h / 2, w / 2])
            }
        }
    }

    pub fn encode(self, video: &Tensor) -> Result<LatentVideo> {
        let dims = four_dims(video)?;
        match self {
            ToyCodec::Identity => LatentVideo::new(video.clone()),
            ToyCodec::AvgPool2 => {
                let [f, c, h, w] = self.latent_dims(dims)?;
                let (ph, pw) = (dims[2], dims[3]);
                let src = video.data();
                let out = Tensor::from_fn(&[f, c, h, w], |i| {
                    let x = i % w;
                    let y = (i / w) % h;
                    let plane = i / (w * h);
                    let base = plane * ph * pw + 2 * y * pw + 2 * x;
                    (src[base] + src[base + 1] + src[base + pw] + src[base + pw + 1]) / 4.0
                });
                LatentVideo::new(out)
            }
        }
    }

    pub fn decode(self, latent: &LatentVideo) -> Result<Tensor> {
        match self {
            ToyCodec::Identity => Ok(latent.tensor().clone()),
            ToyCodec::AvgPool2 => {
                let [f, c, h, w] = latent.dims();
                let (ph, pw) = (2 * h, 2 * w);
                let src = latent.tensor().data();
                Ok(Tensor::from_fn(&[f, c, ph, pw], |i| {
                    let x = i % pw;
                    let y = (i / pw) % ph;
                    let plane = i / (pw * ph);
                    src[plane * h * w + (y / 2) * w + x / 2]
                }))
            }
        }
    }
}

fn four_dims(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[f, c, h, w] => Ok([f, c, h, w]),
        other => Err(Error::Contract(format!(
            "expected a f×c×h×w video, got shape {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitRng;

    #[test]
    fn identity_round_trips() {
        let x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut SplitRng::new(0));
        let z = ToyCodec::Identity.encode(&x).unwrap();
        assert_eq!(ToyCodec::Identity.decode(&z).unwrap(), x);
    }

    #[test]
    fn pooling_averages_blocks() {
        let x = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 4.0, 8.0],
        )
        .unwrap();
        let z = ToyCodec::AvgPool2.encode(&x).unwrap();
        assert_eq!(z.tensor().data(), &[4.0, 3.0]);
    }

    #[test]
    fn pooling_inverts_upsampling() {
        let z = LatentVideo::randn([2, 2, 3, 2], &mut SplitRng::new(1));
        let x = ToyCodec::AvgPool2.decode(&z).unwrap();
        assert_eq!(x.shape(), &[2, 2, 6, 4]);
        assert_eq!(ToyCodec::AvgPool2.encode(&x).unwrap(), z);
    }

    #[test]
    fn odd_sizes_are_rejected() {
        let x = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(
            ToyCodec::AvgPool2.encode(&x),
            Err(Error::Config(_))
        ));
    }
}
