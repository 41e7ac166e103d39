//! Named parameter storage shared by optimizers, EMA updates, checkpoints,
//! and per-step tape bindings.

use super::NetError;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};
use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Ordered name → parameter map. Insertion order is the canonical order for
/// initialization draws, optimizer walks, and checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    params: IndexMap<String, Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<S>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        debug_assert!(
            !self.params.contains_key(name),
            "duplicate parameter {name}"
        );
        self.params.insert(name.to_string(), Param { shape, data });
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>, NetError> {
        self.params.get(name).ok_or_else(|| NetError::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<S>, NetError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NetError::MissingParam {
                name: name.to_string(),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<S>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<S>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    /// Copies every parameter this store shares by name from `src`.
    /// Shapes must agree; extra parameters in `src` are ignored.
    pub fn copy_shared_from(&mut self, src: &ParamStore<S>) -> Result<(), NetError> {
        for (name, param) in self.params.iter_mut() {
            let other = src.params.get(name).ok_or_else(|| NetError::MissingParam {
                name: name.clone(),
            })?;
            if other.shape != param.shape {
                return Err(NetError::ShapeConflict {
                    name: name.clone(),
                    expected: param.shape.clone(),
                    got: other.shape.clone(),
                });
            }
            param.data.clone_from(&other.data);
        }
        Ok(())
    }
}

/// Unit-gain initialization: weights draw from
/// `U[-sqrt(3/fan_in), sqrt(3/fan_in)]` (variance `1/fan_in`, so layer
/// outputs keep the input scale), biases start at zero so layers add no
/// shared offset. Draws consume the rng in insertion order, so one seed
/// pins every parameter.
pub struct Initializer {
    rng: ChaCha12Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    fn draw<S: Scalar>(&mut self, n: usize, bound: f64) -> Vec<S> {
        (0..n)
            .map(|_| S::from_f64(self.rng.gen_range(-bound..bound)))
            .collect()
    }

    /// Conv weight `[kh,kw,cin,cout]` plus bias `[cout]`.
    pub fn conv<S: Scalar>(
        &mut self,
        store: &mut ParamStore<S>,
        name: &str,
        kh: usize,
        kw: usize,
        cin: usize,
        cout: usize,
    ) {
        let bound = (3.0 / (kh * kw * cin) as f64).sqrt();
        let w = self.draw(kh * kw * cin * cout, bound);
        store.insert(&format!("{name}.w"), vec![kh, kw, cin, cout], w);
        store.insert(&format!("{name}.b"), vec![cout], vec![S::zero(); cout]);
    }

    /// Linear weight `[in,out]` plus bias `[out]`.
    pub fn linear<S: Scalar>(
        &mut self,
        store: &mut ParamStore<S>,
        name: &str,
        dim_in: usize,
        dim_out: usize,
    ) {
        let bound = (3.0 / dim_in as f64).sqrt();
        let w = self.draw(dim_in * dim_out, bound);
        store.insert(&format!("{name}.w"), vec![dim_in, dim_out], w);
        store.insert(&format!("{name}.b"), vec![dim_out], vec![S::zero(); dim_out]);
    }
}

/// Which parameter set a binding exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Online,
    Target,
}

/// Per-step snapshot of a store as tensors: tape leaves for the online
/// branch, plain constants for the target branch. Binding once per step
/// guarantees each parameter is a single leaf, so gradients accumulate in
/// one place.
pub struct Binding<S: Scalar> {
    tensors: IndexMap<String, Tensor<S>>,
    pub branch: Branch,
}

impl<S: Scalar> Binding<S> {
    pub fn new(
        store: &ParamStore<S>,
        tape: Option<&Tape<S>>,
        branch: Branch,
    ) -> Result<Self, NetError> {
        let mut tensors = IndexMap::with_capacity(store.len());
        for (name, p) in store.iter() {
            let t = match tape {
                Some(tape) => tape.leaf(p.data.clone(), &p.shape)?,
                None => Tensor::constant(p.data.clone(), &p.shape)?,
            };
            tensors.insert(name.clone(), t);
        }
        Ok(Binding { tensors, branch })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<S>, NetError> {
        self.tensors.get(name).ok_or_else(|| NetError::MissingParam {
            name: name.to_string(),
        })
    }

    /// Leaf gradients accumulated by backward passes, keyed like the store.
    /// Parameters untouched by the loss report zeros.
    pub fn gradients(&self) -> IndexMap<String, Vec<S>> {
        self.tensors
            .iter()
            .filter_map(|(name, t)| t.grad().map(|g| (name.clone(), g)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut store = ParamStore::<f32>::new();
        store.insert("b.w", vec![2], vec![1.0, 2.0]);
        store.insert("a.w", vec![1], vec![3.0]);
        assert_eq!(store.names(), vec!["b.w", "a.w"]);
        assert_eq!(store.total_elements(), 3);
    }

    #[test]
    fn initializer_is_seed_deterministic() {
        let build = |seed| {
            let mut store = ParamStore::<f32>::new();
            let mut init = Initializer::new(seed);
            init.linear(&mut store, "fc", 8, 4);
            init.conv(&mut store, "c1", 3, 3, 2, 4);
            store
        };
        let a = build(42);
        let b = build(42);
        let c = build(43);
        for (name, p) in a.iter() {
            assert_eq!(p.data, b.get(name).unwrap().data);
        }
        assert_ne!(
            a.get("fc.w").unwrap().data,
            c.get("fc.w").unwrap().data
        );
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let mut store = ParamStore::<f64>::new();
        let mut init = Initializer::new(1);
        init.linear(&mut store, "fc", 100, 50);
        let bound = (3.0f64 / 100.0).sqrt();
        assert!(store
            .get("fc.w")
            .unwrap()
            .data
            .iter()
            .all(|v| v.abs() <= bound));
        assert!(store.get("fc.b").unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn copy_shared_ignores_extra_source_params() {
        let mut src = ParamStore::<f32>::new();
        src.insert("shared", vec![2], vec![5.0, 6.0]);
        src.insert("online_only", vec![1], vec![9.0]);
        let mut dst = ParamStore::<f32>::new();
        dst.insert("shared", vec![2], vec![0.0, 0.0]);
        dst.copy_shared_from(&src).unwrap();
        assert_eq!(dst.get("shared").unwrap().data, vec![5.0, 6.0]);
        assert!(!dst.contains("online_only"));
    }

    #[test]
    fn online_binding_records_leaves_target_binding_does_not() {
        let mut store = ParamStore::<f64>::new();
        store.insert("p", vec![2], vec![1.0, 2.0]);
        let tape = Tape::new();
        let online = Binding::new(&store, Some(&tape), Branch::Online).unwrap();
        assert!(online.get("p").unwrap().is_leaf());
        let target = Binding::new(&store, None, Branch::Target).unwrap();
        assert!(!target.get("p").unwrap().is_on_tape());
        assert_eq!(tape.node_count(), 1);
    }
}
