use crate::error::{Error, Result};
use crate::model::Model;

/// Parameter class used when comparing gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamClass {
    W,
    Tau,
    Omega,
    Gamma,
    C,
    Alpha,
    ReadoutW,
    ReadoutB,
    Leak,
}

impl ParamClass {
    pub const ALL: [ParamClass; 9] = [
        ParamClass::W,
        ParamClass::Tau,
        ParamClass::Omega,
        ParamClass::Gamma,
        ParamClass::C,
        ParamClass::Alpha,
        ParamClass::ReadoutW,
        ParamClass::ReadoutB,
        ParamClass::Leak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::W => "w",
            ParamClass::Tau => "tau",
            ParamClass::Omega => "omega",
            ParamClass::Gamma => "gamma",
            ParamClass::C => "c",
            ParamClass::Alpha => "alpha",
            ParamClass::ReadoutW => "readout_w",
            ParamClass::ReadoutB => "readout_b",
            ParamClass::Leak => "leak",
        }
    }
}

/// Gradients of one layer with respect to its raw parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub tau: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: Vec<f64>,
    pub c: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub leak: Vec<f64>,
}

/// Gradients shaped like [`Model::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGrads>,
    pub readout: ReadoutGrads,
}

impl GradientSet {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: vec![0.0; l.w.len()],
                    tau: vec![0.0; l.tau_raw.len()],
                    omega: vec![0.0; l.omega_raw.len()],
                    gamma: vec![0.0; l.gamma_raw.len()],
                    c: vec![0.0; l.c.len()],
                    alpha: vec![0.0; l.alpha_raw.len()],
                })
                .collect(),
            readout: ReadoutGrads {
                w: vec![0.0; model.readout.w.len()],
                b: vec![0.0; model.readout.b.len()],
                leak: vec![0.0; 1],
            },
        }
    }

    /// Tensors with their classes, in [`Model::tensors`] order.
    pub fn tensors(&self) -> Vec<(ParamClass, &[f64])> {
        let mut out: Vec<(ParamClass, &[f64])> = Vec::new();
        for l in &self.layers {
            out.push((ParamClass::W, &l.w));
            out.push((ParamClass::Tau, &l.tau));
            out.push((ParamClass::Omega, &l.omega));
            out.push((ParamClass::Gamma, &l.gamma));
            out.push((ParamClass::C, &l.c));
            out.push((ParamClass::Alpha, &l.alpha));
        }
        out.push((ParamClass::ReadoutW, &self.readout.w));
        out.push((ParamClass::ReadoutB, &self.readout.b));
        out.push((ParamClass::Leak, &self.readout.leak));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.tau);
            out.push(&mut l.omega);
            out.push(&mut l.gamma);
            out.push(&mut l.c);
            out.push(&mut l.alpha);
        }
        out.push(&mut self.readout.w);
        out.push(&mut self.readout.b);
        out.push(&mut self.readout.leak);
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `max |self - reference| / max |reference|` over the tensors of one class.
    /// Returns 0 when the class is empty or identically zero in both.
    pub fn relative_discrepancy(&self, reference: &GradientSet, class: ParamClass) -> Result<f64> {
        let a = self.tensors();
        let b = reference.tensors();
        if a.len() != b.len() {
            return Err(Error::Shape("gradient sets have different layouts".into()));
        }
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for ((ca, ta), (_, tb)) in a.iter().zip(&b) {
            if *ca != class {
                continue;
            }
            if ta.len() != tb.len() {
                return Err(Error::Shape(format!("{} tensors differ in length", class.name())));
            }
            for (x, y) in ta.iter().zip(tb.iter()) {
                diff = diff.max((x - y).abs());
                scale = scale.max(y.abs());
            }
        }
        Ok(if scale == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / scale
        })
    }
}
