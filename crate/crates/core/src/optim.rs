//! Adam updates over surfel parameters with one step size per parameter class.

use serde::{Deserialize, Serialize};

use crate::renderer::SceneGradient;
use crate::scene::{ParamClass, SurfelScene, PARAMS_PER_SURFEL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSizes {
    /// Multiplied by the scene extent.
    pub center: f64,
    pub orientation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        Self {
            center: 2e-4,
            orientation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl StepSizes {
    pub fn get(&self, class: ParamClass) -> f64 {
        match class {
            ParamClass::Center => self.center,
            ParamClass::Orientation => self.orientation,
            ParamClass::Scale => self.scale,
            ParamClass::Opacity => self.opacity,
            ParamClass::Color => self.color,
        }
    }

    pub fn all(&self) -> [f64; 5] {
        ParamClass::ALL.map(|c| self.get(c))
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-parameter step sizes, already scaled.
    rates: [f64; PARAMS_PER_SURFEL],
    m: Vec<[f64; PARAMS_PER_SURFEL]>,
    v: Vec<[f64; PARAMS_PER_SURFEL]>,
    t: i32,
}

impl Adam {
    /// `extent` scales the center step size.
    pub fn new(count: usize, steps: &StepSizes, extent: f64) -> Self {
        let mut rates = [0.0; PARAMS_PER_SURFEL];
        for (i, r) in rates.iter_mut().enumerate() {
            let class = ParamClass::of_index(i);
            *r = steps.get(class) * if class == ParamClass::Center { extent } else { 1.0 };
        }
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            rates,
            m: vec![[0.0; PARAMS_PER_SURFEL]; count],
            v: vec![[0.0; PARAMS_PER_SURFEL]; count],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, scene: &mut SurfelScene, grad: &SceneGradient) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, surfel) in scene.surfels.iter_mut().enumerate() {
            let g = &grad.params[k];
            let mut p = surfel.params();
            for i in 0..PARAMS_PER_SURFEL {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g[i] * g[i];
                let update = self.rates[i] * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
                if self.rates[i] != 0.0 {
                    p[i] -= update;
                }
            }
            surfel.set_params(&p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Surfel;
    use crate::Vec3;
    use nalgebra::UnitQuaternion;

    fn scene() -> SurfelScene {
        SurfelScene::new(vec![
            Surfel::new(
                Vec3::zeros(),
                UnitQuaternion::identity(),
                Vec3::new(0.1, 0.1, 0.01),
                0.5,
                Vec3::repeat(0.5),
            ),
            Surfel::new(
                Vec3::repeat(1.0),
                UnitQuaternion::identity(),
                Vec3::new(0.1, 0.1, 0.01),
                0.5,
                Vec3::repeat(0.5),
            ),
        ])
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_the_step_size() {
        let mut s = scene();
        let before = s.clone();
        let mut adam = Adam::new(2, &StepSizes::default(), 2.0);
        let mut g = SceneGradient::zeros(2);
        g.params[0][11] = 3.0;
        g.params[1][0] = -0.5;
        adam.step(&mut s, &g);
        assert!((s.surfels[0].color.x - (0.5 - 2.5e-3)).abs() < 1e-12);
        assert!((s.surfels[1].center.x - (1.0 + 4e-4)).abs() < 1e-12);
        assert_eq!(s.surfels[0].center, before.surfels[0].center);
    }

    #[test]
    fn zero_step_sizes_leave_scene_unchanged() {
        let mut s = scene();
        let zero = StepSizes {
            center: 0.0,
            orientation: 0.0,
            scale: 0.0,
            opacity: 0.0,
            color: 0.0,
        };
        let mut adam = Adam::new(2, &zero, 1.0);
        let mut g = SceneGradient::zeros(2);
        g.params[0] = [1.0; PARAMS_PER_SURFEL];
        adam.step(&mut s, &g);
        assert_eq!(s, scene());
    }
}
