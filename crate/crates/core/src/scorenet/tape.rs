//! Matrix-valued reverse-mode tape.
//!
//! Values are row-stacked sets: a matrix with `B * k` rows holds `B` sets of
//! `k` tokens each, and attention only mixes rows within one set. Forward-mode
//! tangents are built from ordinary nodes, so reverse mode differentiates
//! through them; this is how the exact score-matching trace stays
//! differentiable in the network weights.

use nalgebra::DMatrix;

pub(crate) type Var = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// Broadcast a `1 × n` row over every row.
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Elu(Var),
    /// `elu'(z) ⊙ ż`.
    EluTangent(Var, Var),
    /// Per head and per set: `scale · Q Kᵀ`, laid out `N × (heads · set)`.
    SetScores {
        q: Var,
        k: Var,
        set: usize,
        heads: usize,
        scale: f64,
    },
    /// Softmax over each group of `group` consecutive columns.
    GroupSoftmax(Var, usize),
    /// Tangent of `GroupSoftmax`: `A ⊙ (Ṡ − groupsum(A ⊙ Ṡ))`.
    SoftmaxTangent {
        a: Var,
        ds: Var,
        group: usize,
    },
    /// Per head and per set: `A V`.
    SetApply {
        attn: Var,
        v: Var,
        set: usize,
        heads: usize,
    },
    SumAll(Var),
}

struct Node {
    op: Op,
    value: DMatrix<f64>,
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
pub(crate) fn elu_d1(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[inline]
fn elu_d2(x: f64) -> f64 {
    if x > 0.0 {
        0.0
    } else {
        x.exp()
    }
}

#[derive(Default)]
pub(crate) struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v].value
    }

    fn push(&mut self, op: Op, value: DMatrix<f64>) -> Var {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: DMatrix<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        debug_assert_eq!(b.nrows(), 1);
        let mut v = self.value(a).clone();
        for mut row in v.row_iter_mut() {
            row += b;
        }
        self.push(Op::AddBias(a, bias), v)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).component_mul(self.value(b));
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(elu);
        self.push(Op::Elu(a), v)
    }

    pub fn elu_tangent(&mut self, z: Var, dz: Var) -> Var {
        let v = self.value(z).zip_map(self.value(dz), |z, dz| elu_d1(z) * dz);
        self.push(Op::EluTangent(z, dz), v)
    }

    pub fn set_scores(&mut self, q: Var, k: Var, set: usize, heads: usize, scale: f64) -> Var {
        let (qm, km) = (self.value(q), self.value(k));
        let n = qm.nrows();
        let dk = qm.ncols() / heads;
        let mut out = DMatrix::zeros(n, heads * set);
        for b in 0..n / set {
            let r0 = b * set;
            for h in 0..heads {
                let qb = qm.view((r0, h * dk), (set, dk));
                let kb = km.view((r0, h * dk), (set, dk));
                let s = (qb * kb.transpose()) * scale;
                out.view_mut((r0, h * set), (set, set)).copy_from(&s);
            }
        }
        self.push(
            Op::SetScores {
                q,
                k,
                set,
                heads,
                scale,
            },
            out,
        )
    }

    pub fn group_softmax(&mut self, a: Var, group: usize) -> Var {
        let mut v = self.value(a).clone();
        for r in 0..v.nrows() {
            for g in 0..v.ncols() / group {
                let mut row = v.view_mut((r, g * group), (1, group));
                let m = row.max();
                row.apply(|x| *x = (*x - m).exp());
                let s = row.sum();
                row /= s;
            }
        }
        self.push(Op::GroupSoftmax(a, group), v)
    }

    pub fn softmax_tangent(&mut self, a: Var, ds: Var, group: usize) -> Var {
        let p = self.value(a).component_mul(self.value(ds));
        let sums = group_sums(&p, group);
        let v = &p - self.value(a).component_mul(&broadcast_groups(&sums, group));
        self.push(Op::SoftmaxTangent { a, ds, group }, v)
    }

    pub fn set_apply(&mut self, attn: Var, v: Var, set: usize, heads: usize) -> Var {
        let (am, vm) = (self.value(attn), self.value(v));
        let n = vm.nrows();
        let dv = vm.ncols() / heads;
        let mut out = DMatrix::zeros(n, heads * dv);
        for b in 0..n / set {
            let r0 = b * set;
            for h in 0..heads {
                let ab = am.view((r0, h * set), (set, set));
                let vb = vm.view((r0, h * dv), (set, dv));
                out.view_mut((r0, h * dv), (set, dv)).copy_from(&(ab * vb));
            }
        }
        self.push(Op::SetApply { attn, v, set, heads }, out)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Op::SumAll(a), DMatrix::from_element(1, 1, s))
    }

    /// Reverse sweep from the scalar `out`. Entry `i` of the result is the
    /// gradient with respect to node `i`, or `None` if it does not influence
    /// `out`.
    pub fn backward(&self, out: Var) -> Vec<Option<DMatrix<f64>>> {
        assert_eq!(self.value(out).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; self.nodes.len()];
        grads[out] = Some(DMatrix::from_element(1, 1, 1.0));
        for i in (0..=out).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = &g * self.value(b).transpose();
                    let gb = self.value(a).transpose() * &g;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::AddBias(a, bias) => {
                    let gb = DMatrix::from_fn(1, g.ncols(), |_, c| g.column(c).sum());
                    accumulate(&mut grads, bias, gb);
                    accumulate(&mut grads, a, g.clone());
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = g.component_mul(self.value(b));
                    let gb = g.component_mul(self.value(a));
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, &g * c),
                Op::Elu(a) => {
                    let ga = g.zip_map(self.value(a), |g, z| g * elu_d1(z));
                    accumulate(&mut grads, a, ga);
                }
                Op::EluTangent(z, dz) => {
                    let zv = self.value(z);
                    let mut gz = g.zip_map(zv, |g, z| g * elu_d2(z));
                    gz.component_mul_assign(self.value(dz));
                    let gdz = g.zip_map(zv, |g, z| g * elu_d1(z));
                    accumulate(&mut grads, z, gz);
                    accumulate(&mut grads, dz, gdz);
                }
                Op::SetScores {
                    q,
                    k,
                    set,
                    heads,
                    scale,
                } => {
                    let (qm, km) = (self.value(q), self.value(k));
                    let dk = qm.ncols() / heads;
                    let mut gq = DMatrix::zeros(qm.nrows(), qm.ncols());
                    let mut gk = DMatrix::zeros(km.nrows(), km.ncols());
                    for b in 0..qm.nrows() / set {
                        let r0 = b * set;
                        for h in 0..heads {
                            let gb = g.view((r0, h * set), (set, set));
                            let qb = qm.view((r0, h * dk), (set, dk));
                            let kb = km.view((r0, h * dk), (set, dk));
                            gq.view_mut((r0, h * dk), (set, dk)).copy_from(&((gb * kb) * scale));
                            gk.view_mut((r0, h * dk), (set, dk))
                                .copy_from(&((gb.transpose() * qb) * scale));
                        }
                    }
                    accumulate(&mut grads, q, gq);
                    accumulate(&mut grads, k, gk);
                }
                Op::GroupSoftmax(a, group) => {
                    let y = &self.nodes[i].value;
                    let gy = g.component_mul(y);
                    let sums = group_sums(&gy, group);
                    let ga = &gy - y.component_mul(&broadcast_groups(&sums, group));
                    accumulate(&mut grads, a, ga);
                }
                Op::SoftmaxTangent { a, ds, group } => {
                    let (am, dsm) = (self.value(a), self.value(ds));
                    let p = am.component_mul(dsm);
                    let psum = broadcast_groups(&group_sums(&p, group), group);
                    let gsum = broadcast_groups(&group_sums(&g.component_mul(am), group), group);
                    // out = P − A ⊙ bcast(Σ P), with P = A ⊙ Ṡ
                    let gp = &g - &gsum;
                    let mut ga = gp.component_mul(dsm);
                    ga -= g.component_mul(&psum);
                    let gds = gp.component_mul(am);
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, ds, gds);
                }
                Op::SetApply { attn, v, set, heads } => {
                    let (am, vm) = (self.value(attn), self.value(v));
                    let dv = vm.ncols() / heads;
                    let mut ga = DMatrix::zeros(am.nrows(), am.ncols());
                    let mut gv = DMatrix::zeros(vm.nrows(), vm.ncols());
                    for b in 0..vm.nrows() / set {
                        let r0 = b * set;
                        for h in 0..heads {
                            let gb = g.view((r0, h * dv), (set, dv));
                            let ab = am.view((r0, h * set), (set, set));
                            let vb = vm.view((r0, h * dv), (set, dv));
                            ga.view_mut((r0, h * set), (set, set)).copy_from(&(gb * vb.transpose()));
                            gv.view_mut((r0, h * dv), (set, dv)).copy_from(&(ab.transpose() * gb));
                        }
                    }
                    accumulate(&mut grads, attn, ga);
                    accumulate(&mut grads, v, gv);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut grads, a, DMatrix::from_element(r, c, g[(0, 0)]));
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<DMatrix<f64>>], i: Var, g: DMatrix<f64>) {
    match &mut grads[i] {
        Some(acc) => *acc += g,
        slot @ None => *slot = Some(g),
    }
}

fn group_sums(m: &DMatrix<f64>, group: usize) -> DMatrix<f64> {
    let ng = m.ncols() / group;
    DMatrix::from_fn(m.nrows(), ng, |r, gi| m.view((r, gi * group), (1, group)).sum())
}

fn broadcast_groups(s: &DMatrix<f64>, group: usize) -> DMatrix<f64> {
    DMatrix::from_fn(s.nrows(), s.ncols() * group, |r, c| s[(r, c / group)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random(r: usize, c: usize, rng: &mut crate::Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Builds a scalar from every op and checks leaf gradients against
    /// central differences.
    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, leaves: Vec<DMatrix<f64>>) {
        let run = |ls: &[DMatrix<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = ls.iter().map(|l| t.leaf(l.clone())).collect();
            let out = build(&mut t, &vars);
            (t, vars, out)
        };
        let (t, vars, out) = run(&leaves);
        let grads = t.backward(out);
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            let g = grads[vars[li]].clone().unwrap_or_else(|| leaf * 0.0);
            for idx in 0..leaf.len() {
                let mut plus = leaves.clone();
                plus[li][idx] += h;
                let mut minus = leaves.clone();
                minus[li][idx] -= h;
                let (tp, _, op) = run(&plus);
                let (tm, _, om) = run(&minus);
                let fd = (tp.value(op)[(0, 0)] - tm.value(om)[(0, 0)]) / (2.0 * h);
                assert!(
                    (fd - g[idx]).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "leaf {li} entry {idx}: fd {fd} vs {}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let mut r = rng::seeded(1);
        let leaves = vec![random(4, 3, &mut r), random(3, 2, &mut r), random(1, 2, &mut r)];
        check(
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let b = t.add_bias(m, v[2]);
                let e = t.elu(b);
                let d = t.elu_tangent(b, e);
                let p = t.mul(d, e);
                let s = t.add(p, b);
                let s = t.scale(s, 0.7);
                t.sum_all(s)
            },
            leaves,
        );
    }

    #[test]
    fn attention_ops_match_finite_differences() {
        let mut r = rng::seeded(2);
        let (set, heads, dk) = (3, 2, 2);
        let n = 2 * set;
        let leaves = vec![
            random(n, heads * dk, &mut r),
            random(n, heads * dk, &mut r),
            random(n, heads * dk, &mut r),
            random(n, heads * set, &mut r),
            random(n, heads * dk, &mut r),
        ];
        check(
            |t, v| {
                let s = t.set_scores(v[0], v[1], set, heads, 0.8);
                let a = t.group_softmax(s, set);
                let da = t.softmax_tangent(a, v[3], set);
                let o = t.set_apply(a, v[2], set, heads);
                let o2 = t.set_apply(da, v[2], set, heads);
                let w = t.mul(o, v[4]);
                let w2 = t.mul(o2, o);
                let z = t.add(w, w2);
                t.sum_all(z)
            },
            leaves,
        );
    }

    #[test]
    fn softmax_groups_are_normalized() {
        let mut r = rng::seeded(3);
        let mut t = Tape::new();
        let a = t.leaf(random(4, 6, &mut r) * 30.0);
        let s = t.group_softmax(a, 3);
        let v = t.value(s);
        for row in 0..4 {
            for g in 0..2 {
                let sum: f64 = (0..3).map(|j| v[(row, g * 3 + j)]).sum();
                assert!((sum - 1.0).abs() < 1e-14);
            }
        }
    }
}
