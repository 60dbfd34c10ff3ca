//! Collaborative encoding of users and items.
//!
//! Raw features are projected into a shared `d`-dimensional space by a
//! one-hidden-layer MLP with a parametric ReLU, then propagated `K` times over
//! the symmetrically normalised bipartite graph and averaged across layers.
//! Isolated nodes receive zero vectors at every propagated layer.
//!
//! Matrices act on row vectors: a projection computes `x · W0 + b0`.

use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{Features, InteractionGraph};
use crate::error::{LsirError, Result};
use crate::tape::{Mat, SparseMatrix, Tape, Var};

pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Glorot-uniform initialisation of a `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    /// `D × d_h`
    pub w0: Mat,
    /// `1 × d_h`
    pub b0: Mat,
    /// `d_h × d`
    pub w1: Mat,
    /// `1 × d`
    pub b1: Mat,
    /// `1 × 1` PReLU slope.
    pub slope: Mat,
}

impl ProjectionParams {
    pub fn glorot(input: usize, hidden: usize, out: usize, rng: &mut impl Rng) -> Self {
        ProjectionParams {
            w0: glorot(input, hidden, rng),
            b0: Mat::zeros((1, hidden)),
            w1: glorot(hidden, out, rng),
            b1: Mat::zeros((1, out)),
            slope: Mat::from_elem((1, 1), PRELU_INIT_SLOPE),
        }
    }

    pub fn zeros(input: usize, hidden: usize, out: usize) -> Self {
        ProjectionParams {
            w0: Mat::zeros((input, hidden)),
            b0: Mat::zeros((1, hidden)),
            w1: Mat::zeros((hidden, out)),
            b1: Mat::zeros((1, out)),
            slope: Mat::from_elem((1, 1), PRELU_INIT_SLOPE),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape) -> ProjectionVars {
        ProjectionVars {
            w0: tape.param(self.w0.clone()),
            b0: tape.param(self.b0.clone()),
            w1: tape.param(self.w1.clone()),
            b1: tape.param(self.b1.clone()),
            slope: tape.param(self.slope.clone()),
        }
    }

    fn check(&self, features: &Features) -> Result<()> {
        let hidden = self.w0.ncols();
        let ok = self.w0.nrows() == features.width()
            && self.b0.dim() == (1, hidden)
            && self.w1.nrows() == hidden
            && self.b1.dim() == (1, self.w1.ncols())
            && self.slope.dim() == (1, 1);
        if ok {
            Ok(())
        } else {
            Err(LsirError::Shape(format!(
                "projection W0 is {:?} but features are {} wide",
                self.w0.dim(),
                features.width()
            )))
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionVars {
    pub w0: Var,
    pub b0: Var,
    pub w1: Var,
    pub b1: Var,
    pub slope: Var,
}

impl ProjectionVars {
    pub fn all(&self) -> [Var; 5] {
        [self.w0, self.b0, self.w1, self.b1, self.slope]
    }
}

/// Symmetrically normalised bipartite adjacency, both directions.
#[derive(Debug, Clone)]
pub struct BipartiteAdjacency {
    /// `m × n`, entry `1 / sqrt(|I(u)| |U(i)|)`.
    pub user_from_items: Rc<SparseMatrix>,
    /// `n × m`, the transpose.
    pub item_from_users: Rc<SparseMatrix>,
}

impl BipartiteAdjacency {
    pub fn new(graph: &InteractionGraph) -> Self {
        let weight = |u: usize, i: usize| {
            1.0 / ((graph.user_degree(u) as f64).sqrt() * (graph.item_degree(i) as f64).sqrt())
        };
        let user_rows: Vec<Vec<(usize, f64)>> = (0..graph.num_users())
            .map(|u| graph.items_of(u).iter().map(|&i| (i, weight(u, i))).collect())
            .collect();
        let item_rows: Vec<Vec<(usize, f64)>> = (0..graph.num_items())
            .map(|i| graph.users_of(i).iter().map(|&u| (u, weight(u, i))).collect())
            .collect();
        BipartiteAdjacency {
            user_from_items: Rc::new(SparseMatrix::from_rows(graph.num_items(), &user_rows)),
            item_from_users: Rc::new(SparseMatrix::from_rows(graph.num_users(), &item_rows)),
        }
    }
}

pub(crate) fn project_on(tape: &mut Tape, features: &Features, p: &ProjectionVars) -> Var {
    let pre = match features {
        // one-hot rows select rows of W0
        Features::Identity(_) => p.w0,
        Features::Dense(x) => {
            let x = tape.constant(x.clone());
            tape.matmul(x, p.w0)
        }
    };
    let pre = tape.add_bias(pre, p.b0);
    let hidden = tape.prelu(pre, p.slope);
    let out = tape.matmul(hidden, p.w1);
    tape.add_bias(out, p.b1)
}

pub(crate) struct LayerVars {
    pub users: Vec<Var>,
    pub items: Vec<Var>,
}

pub(crate) fn propagate_on(
    tape: &mut Tape,
    users: Var,
    items: Var,
    adj: &BipartiteAdjacency,
    layers: usize,
) -> LayerVars {
    let mut out = LayerVars {
        users: vec![users],
        items: vec![items],
    };
    for k in 1..=layers {
        let (prev_u, prev_i) = (out.users[k - 1], out.items[k - 1]);
        let u = tape.sparse_mul(adj.user_from_items.clone(), prev_i);
        let i = tape.sparse_mul(adj.item_from_users.clone(), prev_u);
        out.users.push(u);
        out.items.push(i);
    }
    out
}

/// Normaliser applied to the sum of the `K + 1` layer embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutScale {
    /// Divide by `K + 1`: the plain layer mean.
    #[default]
    Mean,
    /// Divide by `K`.
    OverLayers,
}

fn layer_scale(layers: usize, scale: ReadoutScale) -> f64 {
    match scale {
        ReadoutScale::Mean => 1.0 / (layers + 1) as f64,
        ReadoutScale::OverLayers => 1.0 / layers as f64,
    }
}

fn mean_on(tape: &mut Tape, vars: &[Var], scale: f64) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    tape.scale(acc, scale)
}

pub(crate) fn readout_on(tape: &mut Tape, stack: &LayerVars, scale: ReadoutScale) -> (Var, Var) {
    let k = stack.users.len() - 1;
    let scale = layer_scale(k, scale);
    (
        mean_on(tape, &stack.users, scale),
        mean_on(tape, &stack.items, scale),
    )
}

/// Projects raw features: `prelu(x · W0 + b0) · W1 + b1` per row.
pub fn project(features: &Features, params: &ProjectionParams) -> Result<Mat> {
    params.check(features)?;
    let mut tape = Tape::new();
    let vars = params.on_tape(&mut tape);
    let out = project_on(&mut tape, features, &vars);
    Ok(tape.value(out).clone())
}

/// Embeddings of every propagation layer, layer 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    pub users: Vec<Mat>,
    pub items: Vec<Mat>,
}

impl LayerStack {
    pub fn layers(&self) -> usize {
        self.users.len() - 1
    }
}

pub fn propagate(
    users: &Mat,
    items: &Mat,
    graph: &InteractionGraph,
    layers: usize,
) -> Result<LayerStack> {
    if layers == 0 {
        return Err(LsirError::Config("propagation needs at least one layer".into()));
    }
    if users.nrows() != graph.num_users()
        || items.nrows() != graph.num_items()
        || users.ncols() != items.ncols()
    {
        return Err(LsirError::Shape(format!(
            "embeddings {:?} / {:?} do not fit a graph of {} users and {} items",
            users.dim(),
            items.dim(),
            graph.num_users(),
            graph.num_items()
        )));
    }
    let adj = BipartiteAdjacency::new(graph);
    let mut tape = Tape::new();
    let u = tape.constant(users.clone());
    let i = tape.constant(items.clone());
    let stack = propagate_on(&mut tape, u, i, &adj, layers);
    Ok(LayerStack {
        users: stack.users.iter().map(|v| tape.value(*v).clone()).collect(),
        items: stack.items.iter().map(|v| tape.value(*v).clone()).collect(),
    })
}

pub fn readout(stack: &LayerStack, scale: ReadoutScale) -> (Mat, Mat) {
    let scale = layer_scale(stack.layers(), scale);
    let mean = |layers: &[Mat]| {
        let mut acc = layers[0].clone();
        for l in &layers[1..] {
            acc += l;
        }
        acc * scale
    };
    (mean(&stack.users), mean(&stack.items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn graph(m: usize, n: usize, pairs: &[(usize, usize)]) -> InteractionGraph {
        InteractionGraph::from_pairs(
            m,
            n,
            pairs.iter().copied(),
            Features::Identity(m),
            Features::Identity(n),
        )
        .unwrap()
        .0
    }

    fn prelu(x: f64, s: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            s * x
        }
    }

    #[test]
    fn zero_params_project_to_zero() {
        let x = Features::Dense(array![[1.0, -2.0], [0.5, 3.0]]);
        let out = project(&x, &ProjectionParams::zeros(2, 3, 4)).unwrap();
        assert_eq!(out, Mat::zeros((2, 4)));
    }

    #[test]
    fn identity_projection_of_nonnegative_input() {
        let x = array![[1.0, 0.0, 2.5], [0.0, 3.0, 0.25]];
        let p = ProjectionParams {
            w0: Mat::eye(3),
            b0: Mat::zeros((1, 3)),
            w1: Mat::eye(3),
            b1: Mat::zeros((1, 3)),
            slope: array![[0.25]],
        };
        assert_eq!(project(&Features::Dense(x.clone()), &p).unwrap(), x);
    }

    #[test]
    fn projection_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = glorot(3, 4, &mut rng) * 3.0;
        let mut p = ProjectionParams::glorot(4, 5, 2, &mut rng);
        p.b0 = glorot(1, 5, &mut rng);
        p.b1 = glorot(1, 2, &mut rng);
        let out = project(&Features::Dense(x.clone()), &p).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let mut acc = p.b1[[0, c]];
                for h in 0..5 {
                    let mut pre = p.b0[[0, h]];
                    for j in 0..4 {
                        pre += x[[r, j]] * p.w0[[j, h]];
                    }
                    acc += prelu(pre, 0.25) * p.w1[[h, c]];
                }
                assert!((out[[r, c]] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_features_select_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ProjectionParams::glorot(3, 4, 2, &mut rng);
        let a = project(&Features::Identity(3), &p).unwrap();
        let b = project(&Features::Dense(Mat::eye(3)), &p).unwrap();
        assert!((a - b).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn projection_shape_error() {
        let p = ProjectionParams::zeros(3, 2, 2);
        assert!(matches!(
            project(&Features::Dense(Mat::zeros((2, 4))), &p),
            Err(LsirError::Shape(_))
        ));
    }

    #[test]
    fn hand_expanded_first_layer() {
        // u1-i1, u1-i2, u2-i2 (0-based: u0-i0, u0-i1, u1-i1)
        let g = graph(2, 2, &[(0, 0), (0, 1), (1, 1)]);
        let hu = array![[0.0, 0.0], [0.0, 0.0]];
        let hi = array![[1.0, 2.0], [3.0, -1.0]];
        let s = propagate(&hu, &hi, &g, 1).unwrap();
        let expect_u0 = &hi.row(0) / 2f64.sqrt() + &(&hi.row(1) / 2.0);
        for c in 0..2 {
            assert!((s.users[1][[0, c]] - expect_u0[c]).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_user_stays_zero() {
        let g = graph(3, 2, &[(0, 0), (1, 1)]);
        let hu = Mat::ones((3, 2));
        let hi = Mat::ones((2, 2));
        let s = propagate(&hu, &hi, &g, 3).unwrap();
        for k in 1..=3 {
            assert!(s.users[k].row(2).iter().all(|&v| v == 0.0));
        }
        assert!(propagate(&hu, &hi, &g, 0).is_err());
    }

    #[test]
    fn readout_scales() {
        let v = array![[1.0, -2.0]];
        let stack = LayerStack {
            users: vec![v.clone(), Mat::zeros((1, 2))],
            items: vec![v.clone(), Mat::zeros((1, 2))],
        };
        assert_eq!(readout(&stack, ReadoutScale::Mean).0, &v / 2.0);
        let stack = LayerStack {
            users: vec![v.clone(); 4],
            items: vec![v.clone(); 4],
        };
        assert_eq!(readout(&stack, ReadoutScale::Mean).0, v);
        let lit = readout(&stack, ReadoutScale::OverLayers).0;
        assert!((lit - &v * (4.0 / 3.0)).iter().all(|x| x.abs() < 1e-15));
    }
}
