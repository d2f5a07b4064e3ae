//! Network shape configuration.

use serde::{Deserialize, Serialize};

/// One set-abstraction level: FPS centroids, ball query, shared MLP, max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAbstraction {
    pub centroids: usize,
    /// Ball radius in normalised (unit-sphere) coordinates.
    pub radius: f64,
    pub max_neighbors: usize,
    pub mlp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Points per cloud (N).
    pub n_points: usize,
    /// Waypoints per trajectory (T).
    pub t: usize,
    /// Shape categories (K).
    pub k: usize,
    pub sa1: SetAbstraction,
    pub sa2: SetAbstraction,
    /// Shared MLP over SA2 centroids before the global max-pool.
    pub global_mlp: Vec<usize>,
    /// Feature propagation from SA2 (plus the broadcast global feature) to SA1.
    pub fp2_mlp: Vec<usize>,
    /// Feature propagation from SA1 to every input point.
    pub fp1_mlp: Vec<usize>,
    pub cls_hidden: usize,
    /// Per-waypoint encoder, input dimension 3.
    pub waypoint_mlp: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// Affordance probability above which a point joins the hanging part.
    pub affordance_threshold: f64,
    /// A second encoder (no propagation levels) for classification.
    pub separate_encoders: bool,
}

impl ModelConfig {
    /// Published sizes: 512-d per-point and global features, 512 → 256 → K
    /// classifier, 3 → 64 → 32 → 32 waypoint encoder.
    pub fn full() -> Self {
        ModelConfig {
            n_points: 1000,
            t: 20,
            k: 5,
            sa1: SetAbstraction {
                centroids: 256,
                radius: 0.1,
                max_neighbors: 32,
                mlp: vec![64, 64, 128],
            },
            sa2: SetAbstraction {
                centroids: 64,
                radius: 0.2,
                max_neighbors: 32,
                mlp: vec![128, 128, 256],
            },
            global_mlp: vec![256, 512],
            fp2_mlp: vec![256, 256],
            fp1_mlp: vec![256, 512],
            cls_hidden: 256,
            waypoint_mlp: vec![64, 32, 32],
            lstm_hidden: 128,
            lstm_layers: 2,
            affordance_threshold: 0.1,
            separate_encoders: false,
        }
    }

    /// Reduced widths that train in minutes on one CPU core.
    pub fn desk() -> Self {
        ModelConfig {
            n_points: 1000,
            t: 20,
            k: 5,
            sa1: SetAbstraction {
                centroids: 128,
                radius: 0.1,
                max_neighbors: 16,
                mlp: vec![16, 32],
            },
            sa2: SetAbstraction {
                centroids: 32,
                radius: 0.25,
                max_neighbors: 16,
                mlp: vec![48, 64],
            },
            global_mlp: vec![64, 96],
            fp2_mlp: vec![64],
            fp1_mlp: vec![48],
            cls_hidden: 64,
            waypoint_mlp: vec![32, 32, 32],
            lstm_hidden: 64,
            lstm_layers: 2,
            affordance_threshold: 0.1,
            separate_encoders: false,
        }
    }

    /// Full widths divided by eight on a 64-point cloud with T = 10; used
    /// by the gradient checks.
    pub fn tiny() -> Self {
        let p = Self::full();
        let div = |v: &[usize]| v.iter().map(|d| (d / 8).max(1)).collect::<Vec<_>>();
        ModelConfig {
            n_points: 64,
            t: 10,
            k: 5,
            sa1: SetAbstraction {
                centroids: 32,
                radius: 0.3,
                max_neighbors: 8,
                mlp: div(&p.sa1.mlp),
            },
            sa2: SetAbstraction {
                centroids: 8,
                radius: 0.6,
                max_neighbors: 8,
                mlp: div(&p.sa2.mlp),
            },
            global_mlp: div(&p.global_mlp),
            fp2_mlp: div(&p.fp2_mlp),
            fp1_mlp: div(&p.fp1_mlp),
            cls_hidden: p.cls_hidden / 8,
            waypoint_mlp: div(&p.waypoint_mlp),
            lstm_hidden: p.lstm_hidden / 8,
            lstm_layers: 2,
            affordance_threshold: 0.1,
            separate_encoders: false,
        }
    }

    pub fn sa1_dim(&self) -> usize {
        *self.sa1.mlp.last().unwrap_or(&3)
    }

    pub fn sa2_dim(&self) -> usize {
        *self.sa2.mlp.last().unwrap_or(&(self.sa1_dim() + 3))
    }

    /// Dimension of the global feature `f^g`.
    pub fn global_dim(&self) -> usize {
        *self.global_mlp.last().unwrap_or(&(self.sa2_dim() + 3))
    }

    pub fn fp2_dim(&self) -> usize {
        *self
            .fp2_mlp
            .last()
            .unwrap_or(&(self.sa2_dim() + self.global_dim() + self.sa1_dim()))
    }

    /// Dimension of the per-point feature `f^S` (and of `f^S_cond`).
    pub fn feature_dim(&self) -> usize {
        *self.fp1_mlp.last().unwrap_or(&(self.fp2_dim() + 3))
    }

    pub fn waypoint_dim(&self) -> usize {
        *self.waypoint_mlp.last().unwrap_or(&3)
    }

    /// Input width of the first LSTM layer.
    pub fn lstm_input(&self) -> usize {
        self.waypoint_dim() + self.feature_dim()
    }

    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            (self.n_points >= 1, "n_points must be positive"),
            (self.t >= 2, "t must be at least 2"),
            (self.k >= 1, "k must be positive"),
            (self.sa1.centroids >= 1 && self.sa2.centroids >= 1, "centroid counts must be positive"),
            (self.sa2.centroids <= self.sa1.centroids, "sa2 centroids exceed sa1 centroids"),
            (self.sa1.max_neighbors >= 1 && self.sa2.max_neighbors >= 1, "max_neighbors must be positive"),
            (self.sa1.radius > 0.0 && self.sa2.radius > 0.0, "ball radii must be positive"),
            (self.lstm_layers >= 1 && self.lstm_hidden >= 1, "lstm sizes must be positive"),
            (self.cls_hidden >= 1, "cls_hidden must be positive"),
            (
                (0.0..1.0).contains(&self.affordance_threshold),
                "affordance_threshold must lie in [0, 1)",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_sizes() {
        let c = ModelConfig::full();
        assert_eq!(c.feature_dim(), 512);
        assert_eq!(c.global_dim(), 512);
        assert_eq!(c.lstm_input(), 544);
        assert_eq!((c.n_points, c.k), (1000, 5));
    }

    #[test]
    fn presets_validate() {
        for c in [ModelConfig::full(), ModelConfig::desk(), ModelConfig::tiny()] {
            c.validate().unwrap();
        }
        let t = ModelConfig::tiny();
        assert_eq!((t.n_points, t.t, t.feature_dim()), (64, 10, 64));
    }
}
