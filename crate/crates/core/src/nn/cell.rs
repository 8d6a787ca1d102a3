use crate::error::{Error, Result};
use crate::ndcore::{sigmoid_scalar, Matrix, Rng, Vector};

/// Weights of one LSTM cell. Every matrix is `hidden x (hidden + input)` and
/// multiplies the concatenation `[h_{t-1}, x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Elman cell, `h_t = tanh(w [h_{t-1}, x_t] + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCellParams {
    pub w: Matrix,
    pub b: Vector,
}

fn check_cell_shape(w: &Matrix, b: &Vector, what: &'static str) -> Result<()> {
    let hidden = w.rows();
    if hidden == 0 || w.cols() <= hidden {
        return Err(Error::param(format!(
            "{what}: weight shape {} needs hidden >= 1 and input >= 1",
            w.shape_str()
        )));
    }
    if b.len() != hidden {
        return Err(Error::shape(
            what,
            w.shape_str(),
            format!("bias len {}", b.len()),
        ));
    }
    Ok(())
}

impl LstmCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        let b = Vector::zeros(hidden);
        LstmCellParams {
            w_i: w.clone(),
            w_f: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_i: b.clone(),
            b_f: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Weights uniform in `[-bound, bound)`, biases zero. Draw order is
    /// `w_i, w_f, w_c, w_o`, each row-major.
    pub fn random(hidden: usize, input: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o] {
            for v in w.as_mut_slice() {
                *v = rng.uniform(-bound, bound);
            }
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.w_i.shape();
        for w in [&self.w_f, &self.w_c, &self.w_o] {
            if w.shape() != shape {
                return Err(Error::shape("LstmCellParams", self.w_i.shape_str(), w.shape_str()));
            }
        }
        for b in [&self.b_i, &self.b_f, &self.b_c, &self.b_o] {
            check_cell_shape(&self.w_i, b, "LstmCellParams")?;
        }
        Ok(())
    }

    pub fn weights(&self) -> [&Matrix; 4] {
        [&self.w_i, &self.w_f, &self.w_c, &self.w_o]
    }

    pub fn biases(&self) -> [&Vector; 4] {
        [&self.b_i, &self.b_f, &self.b_c, &self.b_o]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        let LstmCellParams {
            w_i,
            w_f,
            w_c,
            w_o,
            b_i,
            b_f,
            b_c,
            b_o,
        } = self;
        [
            w_i.as_mut_slice(),
            w_f.as_mut_slice(),
            w_c.as_mut_slice(),
            w_o.as_mut_slice(),
            b_i,
            b_f,
            b_c,
            b_o,
        ]
    }
}

impl RnnCellParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        RnnCellParams {
            w: Matrix::zeros(hidden, hidden + input),
            b: Vector::zeros(hidden),
        }
    }

    pub fn random(hidden: usize, input: usize, bound: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        for v in p.w.as_mut_slice() {
            *v = rng.uniform(-bound, bound);
        }
        p
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn input(&self) -> usize {
        self.w.cols() - self.w.rows()
    }

    pub fn validate(&self) -> Result<()> {
        check_cell_shape(&self.w, &self.b, "RnnCellParams")
    }
}

/// `b[j] + Σ_k w[j,k] hx[k]`, accumulated in `k` order starting from the bias.
/// The batched kernels use the same order, so single steps agree with them.
fn affine(w: &Matrix, b: &[f64], hx: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|j| {
            let mut acc = b[j];
            for (wk, xk) in w.row(j).iter().zip(hx) {
                if *xk != 0.0 {
                    acc += xk * wk;
                }
            }
            acc
        })
        .collect()
}

fn check_step_inputs(hidden: usize, input: usize, h: &[f64], x: &[f64], op: &'static str) -> Result<()> {
    if h.len() != hidden {
        return Err(Error::shape(op, format!("hidden {hidden}"), format!("state len {}", h.len())));
    }
    if x.len() != input {
        return Err(Error::shape(op, format!("input {input}"), format!("x len {}", x.len())));
    }
    Ok(())
}

/// One LSTM time step. The incoming state is left untouched.
pub fn lstm_cell_step(p: &LstmCellParams, s: &LstmState, x: &Vector) -> Result<LstmState> {
    p.validate()?;
    let hidden = p.hidden();
    check_step_inputs(hidden, p.input(), &s.h, x, "lstm_cell_step")?;
    if s.c.len() != hidden {
        return Err(Error::shape(
            "lstm_cell_step",
            format!("hidden {hidden}"),
            format!("cell len {}", s.c.len()),
        ));
    }
    let hx = s.h.concat(x);
    let i = affine(&p.w_i, &p.b_i, &hx);
    let f = affine(&p.w_f, &p.b_f, &hx);
    let g = affine(&p.w_c, &p.b_c, &hx);
    let o = affine(&p.w_o, &p.b_o, &hx);

    let mut c = Vector::zeros(hidden);
    let mut h = Vector::zeros(hidden);
    for j in 0..hidden {
        let (ij, fj, gj, oj) = (
            sigmoid_scalar(i[j]),
            sigmoid_scalar(f[j]),
            g[j].tanh(),
            sigmoid_scalar(o[j]),
        );
        c[j] = fj * s.c[j] + ij * gj;
        h[j] = oj * c[j].tanh();
    }
    Ok(LstmState { h, c })
}

pub fn rnn_cell_step(p: &RnnCellParams, h: &Vector, x: &Vector) -> Result<Vector> {
    p.validate()?;
    check_step_inputs(p.hidden(), p.input(), h, x, "rnn_cell_step")?;
    let hx = h.concat(x);
    Ok(affine(&p.w, &p.b, &hx).into_iter().map(f64::tanh).collect())
}
