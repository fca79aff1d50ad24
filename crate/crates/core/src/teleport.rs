//! Activation teleportation: replace the pre-attention residual at one layer
//! with a point from a 2-D PCA grid and follow the downstream trajectory.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{forward_capture, forward_inject, Capture, InjectionSpec, ToyModel};
use crate::pca::{PcaModel, TeleportGrid};
use crate::sequence::TokenSequence;

pub const CONTROL_PROMPT: &str = "I'm sorry, Dave. I'm afraid I can't do that.";
/// Sublayers after injection spanned by a quiver arrow.
pub const QUIVER_HORIZON: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseSpace {
    /// Squared distance between 2-D projections.
    #[default]
    Pca2,
    /// Squared distance between full residual vectors.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleportRun {
    pub point: [f64; 2],
    /// Projected positions from the injection sublayer to the last sublayer.
    pub trajectory: Vec<[f64; 2]>,
    pub quiver: [f64; 2],
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeleportResult {
    pub layer: usize,
    pub injection_sublayer: usize,
    /// Sublayers spanned by each quiver (12 unless the run ends sooner).
    pub horizon: usize,
    pub mse_space: MseSpace,
    pub grid: TeleportGrid,
    /// Projected control trajectory over all sublayers.
    pub control: Vec<[f64; 2]>,
    pub runs: Vec<TeleportRun>,
}

fn project2(pca: &PcaModel, v: &[f32]) -> Result<[f64; 2]> {
    let x: Vec<f64> = v.iter().map(|&a| a as f64).collect();
    let z = pca.project_one(&x, 2)?;
    Ok([z[0], z[1]])
}

fn projected(pca: &PcaModel, cap: &Capture) -> Result<Vec<[f64; 2]>> {
    (0..cap.sublayers).map(|s| project2(pca, cap.sublayer(s))).collect()
}

/// Setup shared by every grid point of one experiment.
pub struct Teleporter<'a> {
    model: &'a ToyModel,
    pca: &'a PcaModel,
    prompt: &'a TokenSequence,
    layer: usize,
    space: MseSpace,
    control: Capture,
    control_2d: Vec<[f64; 2]>,
}

impl<'a> Teleporter<'a> {
    pub fn new(
        model: &'a ToyModel,
        pca: &'a PcaModel,
        prompt: &'a TokenSequence,
        layer: usize,
        space: MseSpace,
    ) -> Result<Self> {
        if layer >= model.config.n_layers {
            return Err(Error::LayerOutOfRange {
                layer,
                n_layers: model.config.n_layers,
            });
        }
        if pca.dim() != model.config.d_model {
            return Err(Error::DimensionMismatch {
                expected: model.config.d_model,
                got: pca.dim(),
            });
        }
        if pca.dim() < 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: pca.dim(),
            });
        }
        let control = forward_capture(model, prompt)?;
        let control_2d = projected(pca, &control)?;
        Ok(Self {
            model,
            pca,
            prompt,
            layer,
            space,
            control,
            control_2d,
        })
    }

    pub fn injection_sublayer(&self) -> usize {
        2 * self.layer
    }

    pub fn horizon(&self) -> usize {
        QUIVER_HORIZON.min(self.control.sublayers - 1 - self.injection_sublayer())
    }

    pub fn control(&self) -> &Capture {
        &self.control
    }

    pub fn control_2d(&self) -> &[[f64; 2]] {
        &self.control_2d
    }

    /// Injects `inverse_project(point)` and records the downstream response.
    pub fn run_point(&self, point: [f64; 2]) -> Result<TeleportRun> {
        let s0 = self.injection_sublayer();
        let x = self.pca.inverse_project_one(&point)?;
        let inj = InjectionSpec::pre_attn(self.layer, x.iter().map(|&v| v as f32).collect());
        let cap = forward_inject(self.model, self.prompt, &inj)?;
        let traj = projected(self.pca, &cap)?;
        let h = self.horizon();
        let end = traj[s0 + h];
        let post = s0 + 1..cap.sublayers;
        let n_post = post.len().max(1) as f64;
        let mse = match self.space {
            MseSpace::Pca2 => {
                post.map(|s| {
                    let (a, b) = (traj[s], self.control_2d[s]);
                    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
                })
                .sum::<f64>()
                    / n_post
            }
            MseSpace::Full => {
                post.map(|s| {
                    cap.sublayer(s)
                        .iter()
                        .zip(self.control.sublayer(s))
                        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                    / n_post
            }
        };
        Ok(TeleportRun {
            point,
            trajectory: traj[s0..].to_vec(),
            quiver: [end[0] - point[0], end[1] - point[1]],
            mse,
        })
    }

    /// Injection of the control's own activation at the injection sublayer,
    /// truncated to its rank-2 reconstruction. Its MSE is the floor any grid
    /// point can reach through the 2-D bottleneck at that location.
    pub fn self_injection(&self) -> Result<TeleportRun> {
        self.run_point(self.control_2d[self.injection_sublayer()])
    }
}

pub fn teleport_experiment(
    model: &ToyModel,
    pca: &PcaModel,
    prompt: &TokenSequence,
    layer: usize,
    grid: &TeleportGrid,
) -> Result<TeleportResult> {
    teleport_experiment_with(model, pca, prompt, layer, grid, MseSpace::default())
}

pub fn teleport_experiment_with(
    model: &ToyModel,
    pca: &PcaModel,
    prompt: &TokenSequence,
    layer: usize,
    grid: &TeleportGrid,
    space: MseSpace,
) -> Result<TeleportResult> {
    let t = Teleporter::new(model, pca, prompt, layer, space)?;
    let runs = grid
        .points
        .par_iter()
        .map(|&p| t.run_point(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(TeleportResult {
        layer,
        injection_sublayer: t.injection_sublayer(),
        horizon: t.horizon(),
        mse_space: space,
        grid: grid.clone(),
        control: t.control_2d.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_dataset, ModelConfig};
    use crate::pca::{fit_pca, make_grid};
    use crate::sequence::tokenize_bytes;

    fn setup() -> (ToyModel, PcaModel, TokenSequence) {
        let cfg = ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            d_mlp: 32,
            vocab: 257,
            max_seq: 64,
            seed: 3,
        };
        let model = ToyModel::init(cfg).unwrap();
        let corpus: Vec<TokenSequence> = ["the cat sat", "a dog ran far", "birds sing at dawn", "rain falls"]
            .iter()
            .map(|s| tokenize_bytes(s).unwrap())
            .collect();
        let rs = generate_dataset(&model, &corpus).unwrap();
        let pca = fit_pca(&rs).unwrap();
        (model, pca, tokenize_bytes(CONTROL_PROMPT).unwrap())
    }

    #[test]
    fn control_prompt_text() {
        assert_eq!(CONTROL_PROMPT, "I'm sorry, Dave. I'm afraid I can't do that.");
    }

    #[test]
    fn self_injection_hits_floor() {
        let (model, pca, prompt) = setup();
        let t = Teleporter::new(&model, &pca, &prompt, 1, MseSpace::Pca2).unwrap();
        let p = t.control_2d()[2];
        let floor = t.self_injection().unwrap();
        let grid = TeleportGrid {
            points: vec![p],
            n: 1,
            range_x: (p[0], p[0]),
            range_y: (p[1], p[1]),
        };
        let res = teleport_experiment(&model, &pca, &prompt, 1, &grid).unwrap();
        assert_eq!(res.runs[0].mse, floor.mse);
        assert!(res.runs[0].mse <= floor.mse);
    }

    #[test]
    fn prefix_matches_control_and_far_points_diverge() {
        let (model, pca, prompt) = setup();
        let ctrl = forward_capture(&model, &prompt).unwrap();
        let t = Teleporter::new(&model, &pca, &prompt, 1, MseSpace::Pca2).unwrap();
        let x = pca.inverse_project_one(&[40.0, -40.0]).unwrap();
        let cap = forward_inject(&model, &prompt, &InjectionSpec::pre_attn(1, x.iter().map(|&v| v as f32).collect())).unwrap();
        for s in 0..2 {
            assert_eq!(cap.sublayer(s), ctrl.sublayer(s));
        }
        let t0 = Teleporter::new(&model, &pca, &prompt, 0, MseSpace::Pca2).unwrap();
        let far = t0.run_point([40.0, -40.0]).unwrap();
        assert!(far.mse > t0.self_injection().unwrap().mse);
        assert_eq!(t.horizon(), 1);
        assert_eq!(t0.horizon(), 3);
    }

    #[test]
    fn experiment_shape_and_determinism() {
        let (model, pca, prompt) = setup();
        let grid = make_grid(3, (-1.0, 1.0), (-2.0, 2.0)).unwrap();
        let a = teleport_experiment(&model, &pca, &prompt, 0, &grid).unwrap();
        let b = teleport_experiment(&model, &pca, &prompt, 0, &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.runs.len(), 9);
        assert_eq!(a.control.len(), 4);
        assert!(a.runs.iter().all(|r| r.trajectory.len() == 4));
        for (run, p) in a.runs.iter().zip(&grid.points) {
            assert_eq!(run.point, *p);
        }
        let full = teleport_experiment_with(&model, &pca, &prompt, 0, &grid, MseSpace::Full).unwrap();
        assert_eq!(full.control, a.control);
        assert!(matches!(
            teleport_experiment(&model, &pca, &prompt, 2, &grid),
            Err(Error::LayerOutOfRange { .. })
        ));
    }
}
