//! Partition-lattice transforms between correlation families and cumulants.
//!
//! A family of order `n` assigns a value to every nonempty subset of
//! `{0, .., n-1}` (general mode, subsets as bitmasks) or to every subset size
//! (exchangeable mode). Cumulants are
//! `g_A = sum_sigma (-1)^(|sigma|-1) (|sigma|-1)! prod_i G_{sigma_i}` over set
//! partitions `sigma` of `A`, and correlations are recovered by
//! `G_A = sum_sigma prod_i g_{sigma_i}`.

use num_bigint::BigInt;
use num_rational::BigRational;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};
use thiserror::Error;

pub const MAX_ORDER: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CumulantError {
    #[error("order {0} outside the supported range {1}..={2}")]
    Order(usize, usize, usize),
    #[error("family value missing for subset {0:#b}")]
    Missing(u32),
    #[error("toy model: {0}")]
    Toy(String),
}

/// Arithmetic needed by the transforms, implemented for `f64` and exact
/// rationals.
pub trait Scalar: Clone + Debug + PartialEq + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> {
    fn from_i64(x: i64) -> Self;
}

impl Scalar for f64 {
    fn from_i64(x: i64) -> Self {
        x as f64
    }
}

impl Scalar for BigRational {
    fn from_i64(x: i64) -> Self {
        BigRational::from_integer(BigInt::from(x))
    }
}

/// A set partition stored as block bitmasks, blocks ordered by smallest element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetPartition {
    masks: Vec<u16>,
}

impl SetPartition {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn masks(&self) -> &[u16] {
        &self.masks
    }

    /// Blocks as sorted index lists over `{0, .., n-1}`.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        self.masks.iter().map(|&m| (0..16).filter(|i| m & (1 << i) != 0).collect()).collect()
    }
}

/// Restricted growth strings of length `n` in lexicographic order.
pub struct PartitionIter {
    a: Vec<u8>,
    b: Vec<u8>,
    done: bool,
}

impl PartitionIter {
    pub fn new(n: usize) -> Self {
        PartitionIter { a: vec![0; n], b: vec![1; n], done: n == 0 }
    }
}

impl Iterator for PartitionIter {
    type Item = SetPartition;

    fn next(&mut self) -> Option<SetPartition> {
        if self.done {
            return None;
        }
        let n = self.a.len();
        let k = *self.a.iter().max().unwrap_or(&0) as usize + 1;
        let mut masks = vec![0u16; k];
        for (i, &c) in self.a.iter().enumerate() {
            masks[c as usize] |= 1 << i;
        }
        // Advance: b[i] = 1 + max(a[0..i]).
        let mut i = n;
        loop {
            if i <= 1 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.a[i] < self.b[i] {
                self.a[i] += 1;
                for j in i + 1..n {
                    self.a[j] = 0;
                    self.b[j] = self.b[i].max(self.a[i] + 1);
                }
                break;
            }
        }
        Some(SetPartition { masks })
    }
}

/// All partitions of `{0, .., n-1}` in restricted-growth-string order.
pub fn enumerate_partitions(n: usize) -> Result<Vec<SetPartition>, CumulantError> {
    if !(1..=MAX_ORDER).contains(&n) {
        return Err(CumulantError::Order(n, 1, MAX_ORDER));
    }
    Ok(PartitionIter::new(n).collect())
}

pub fn bell(n: usize) -> u64 {
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = vec![*row.last().expect("nonempty")];
        for x in &row {
            let v = next.last().expect("nonempty") + x;
            next.push(v);
        }
        row = next;
    }
    row[0]
}

#[derive(Debug, Clone, PartialEq)]
pub enum FamilyValues<T> {
    /// Entry `mask` holds the value on that subset; entry 0 is unused.
    General(Vec<Option<T>>),
    /// Entry `k` holds the value on every subset of size `k`; entry 0 unused.
    Exchangeable(Vec<Option<T>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family<T> {
    pub order: usize,
    pub values: FamilyValues<T>,
}

pub type CorrelationFamily<T> = Family<T>;
pub type CumulantFamily<T> = Family<T>;

impl<T: Scalar> Family<T> {
    pub fn general(order: usize, f: impl Fn(u32) -> T) -> Result<Self, CumulantError> {
        check_order(order)?;
        let vals = (0..1u32 << order).map(|m| if m == 0 { None } else { Some(f(m)) }).collect();
        Ok(Family { order, values: FamilyValues::General(vals) })
    }

    pub fn exchangeable(values_by_size: Vec<T>) -> Result<Self, CumulantError> {
        let order = values_by_size.len();
        check_order(order)?;
        let mut vals = vec![None];
        vals.extend(values_by_size.into_iter().map(Some));
        Ok(Family { order, values: FamilyValues::Exchangeable(vals) })
    }

    pub fn from_values(order: usize, values: FamilyValues<T>) -> Result<Self, CumulantError> {
        check_order(order)?;
        let want = match &values {
            FamilyValues::General(v) => (v.len(), 1usize << order),
            FamilyValues::Exchangeable(v) => (v.len(), order + 1),
        };
        if want.0 != want.1 {
            return Err(CumulantError::Order(order, 1, MAX_ORDER));
        }
        Ok(Family { order, values })
    }

    pub fn get(&self, mask: u32) -> Result<T, CumulantError> {
        let v = match &self.values {
            FamilyValues::General(v) => v.get(mask as usize),
            FamilyValues::Exchangeable(v) => v.get(mask.count_ones() as usize),
        };
        v.and_then(|x| x.clone()).ok_or(CumulantError::Missing(mask))
    }

    /// Value on the full index set.
    pub fn top(&self) -> Result<T, CumulantError> {
        self.get((1u32 << self.order) - 1)
    }

    /// General-mode copy of an exchangeable family.
    pub fn to_general(&self) -> Result<Self, CumulantError> {
        let mut vals = vec![None];
        for m in 1..1u32 << self.order {
            vals.push(Some(self.get(m)?));
        }
        Ok(Family { order: self.order, values: FamilyValues::General(vals) })
    }
}

fn check_order(n: usize) -> Result<(), CumulantError> {
    if (1..=MAX_ORDER).contains(&n) {
        Ok(())
    } else {
        Err(CumulantError::Order(n, 1, MAX_ORDER))
    }
}

fn factorial(n: usize) -> i64 {
    (1..=n as i64).product()
}

/// Spread the bits of a partition mask over `{0..k}` onto the members of `set`.
fn spread(mask: u16, members: &[u32]) -> u32 {
    let mut out = 0;
    for (i, &m) in members.iter().enumerate() {
        if mask & (1 << i) != 0 {
            out |= m;
        }
    }
    out
}

/// `sum_sigma w(|sigma|) prod_i G_{sigma_i}` over partitions of `set`.
fn partition_sum<T: Scalar>(
    set: u32,
    parts: &[Vec<SetPartition>],
    weight: &[T],
    get: &impl Fn(u32) -> Result<T, CumulantError>,
) -> Result<T, CumulantError> {
    let members: Vec<u32> = (0..32).filter(|i| set & (1 << i) != 0).map(|i| 1u32 << i).collect();
    let mut total = T::from_i64(0);
    for p in &parts[members.len()] {
        let mut prod = weight[p.len()].clone();
        for &m in p.masks() {
            prod = prod * get(spread(m, &members))?;
        }
        total = total + prod;
    }
    Ok(total)
}

fn transform<T: Scalar>(fam: &Family<T>, to_cumulants: bool) -> Result<Family<T>, CumulantError> {
    let n = fam.order;
    let weight: Vec<T> = (0..=n)
        .map(|k| {
            if k == 0 || !to_cumulants {
                T::from_i64(1)
            } else {
                let s = if k % 2 == 1 { 1 } else { -1 };
                T::from_i64(s * factorial(k - 1))
            }
        })
        .collect();
    match &fam.values {
        FamilyValues::General(_) => {
            let parts: Vec<Vec<SetPartition>> =
                (0..=n).map(|k| if k == 0 { Vec::new() } else { PartitionIter::new(k).collect() }).collect();
            let get = |m: u32| fam.get(m);
            let mut out = vec![None];
            for set in 1..1u32 << n {
                out.push(Some(partition_sum(set, &parts, &weight, &get)?));
            }
            Ok(Family { order: n, values: FamilyValues::General(out) })
        }
        FamilyValues::Exchangeable(_) => {
            let mut out = vec![None];
            for k in 1..=n {
                let mut total = T::from_i64(0);
                for (sizes, count) in integer_partitions(k) {
                    let mut prod = weight[sizes.len()].clone() * T::from_i64(count);
                    for &s in &sizes {
                        prod = prod * fam.get((1u32 << s) - 1)?;
                    }
                    total = total + prod;
                }
                out.push(Some(total));
            }
            Ok(Family { order: n, values: FamilyValues::Exchangeable(out) })
        }
    }
}

/// Integer partitions of `k` (nonincreasing parts) with the number of set
/// partitions of a `k`-set having those block sizes.
fn integer_partitions(k: usize) -> Vec<(Vec<usize>, i64)> {
    fn rec(rem: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rem == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (1..=rem.min(max)).rev() {
            cur.push(p);
            rec(rem - p, p, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(k, k, &mut Vec::new(), &mut all);
    all.into_iter()
        .map(|sizes| {
            let mut denom: i64 = sizes.iter().map(|&s| factorial(s)).product();
            let mut i = 0;
            while i < sizes.len() {
                let j = sizes[i..].iter().take_while(|&&s| s == sizes[i]).count();
                denom *= factorial(j);
                i += j;
            }
            let c = factorial(k) / denom;
            (sizes, c)
        })
        .collect()
}

pub fn cumulants_from_correlations<T: Scalar>(g: &CorrelationFamily<T>) -> Result<CumulantFamily<T>, CumulantError> {
    transform(g, true)
}

pub fn correlations_from_cumulants<T: Scalar>(g: &CumulantFamily<T>) -> Result<CorrelationFamily<T>, CumulantError> {
    transform(g, false)
}

/// Cumulant of the full index set only, for a family given by a closure.
pub fn top_cumulant<T: Scalar>(order: usize, get: impl Fn(u32) -> T) -> Result<T, CumulantError> {
    check_order(order)?;
    let table: Vec<T> = (0..1u32 << order).map(|m| if m == 0 { T::from_i64(1) } else { get(m) }).collect();
    let weights: Vec<T> = (0..=order).map(|k| T::from_i64(if k % 2 == 1 { 1 } else { -1 } * factorial(k.max(1) - 1))).collect();
    let mut total = T::from_i64(0);
    for p in PartitionIter::new(order) {
        let mut prod = weights[p.len()].clone();
        for &m in p.masks() {
            prod = prod * table[m as usize].clone();
        }
        total = total + prod;
    }
    Ok(total)
}

/// Same value as [`top_cumulant`], by the first-block recursion
/// `G_A = sum_{B ∋ min A} g_B G_(A \ B)`, in `O(3^order)` operations.
pub fn top_cumulant_recursive<T: Scalar>(order: usize, get: impl Fn(u32) -> T) -> Result<T, CumulantError> {
    check_order(order)?;
    let corr: Vec<T> = (0..1u32 << order).map(|m| if m == 0 { T::from_i64(1) } else { get(m) }).collect();
    let mut cum = vec![T::from_i64(0); 1 << order];
    for a in 1..1u32 << order {
        let low = a & a.wrapping_neg();
        let rest = a & !low;
        let mut acc = corr[a as usize].clone();
        let mut s = rest;
        loop {
            let b = s | low;
            if b != a {
                acc = acc - cum[b as usize].clone() * corr[(a & !b) as usize].clone();
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & rest;
        }
        cum[a as usize] = acc;
    }
    Ok(cum.pop().expect("nonempty"))
}

/// Cumulant of the hard-sphere exclusion indicators of `positions`.
pub fn exclusion_cumulant(positions: &[crate::vec3::Vec3], epsilon: f64) -> Result<f64, CumulantError> {
    let n = positions.len();
    if !(2..=8).contains(&n) {
        return Err(CumulantError::Order(n, 2, 8));
    }
    let mut overlap = vec![0u32; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && crate::geometry::torus_distance(&positions[i], &positions[j]) <= epsilon {
                overlap[i] |= 1 << j;
            }
        }
    }
    top_cumulant(n, |m| {
        let admissible = (0..n).all(|i| m & (1 << i) == 0 || overlap[i] & m == 0);
        if admissible {
            1.0
        } else {
            0.0
        }
    })
}

/// A finite point process on at most six tagged atoms, given by the
/// probability of each outcome subset.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub atoms: Vec<crate::statistics::phase::Point>,
    /// `(subset mask, probability)`; probabilities sum to one.
    pub outcomes: Vec<(u32, f64)>,
    pub lambda: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgfCheck {
    pub direct: f64,
    pub expansion: f64,
    pub residual: f64,
    pub max_order: usize,
}

impl ToyModel {
    fn validate(&self) -> Result<(), CumulantError> {
        let k = self.atoms.len();
        if k == 0 || k > 6 {
            return Err(CumulantError::Toy(format!("{k} atoms; expected 1..=6")));
        }
        let total: f64 = self.outcomes.iter().map(|o| o.1).sum();
        if self.outcomes.iter().any(|&(m, p)| m >= 1 << k || !(p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(CumulantError::Toy("outcomes must be subsets of the atoms with probabilities summing to 1".into()));
        }
        if !(self.lambda > 0.0 && self.mu > 0.0) {
            return Err(CumulantError::Toy("chemical potentials must be positive".into()));
        }
        Ok(())
    }

    /// Probability that every atom of `set` is present.
    fn rho(&self, set: u32) -> f64 {
        self.outcomes.iter().filter(|(m, _)| m & set == set).map(|o| o.1).sum()
    }
}

/// Compare `log E exp(sum H)` with its cumulant expansion
/// `sum_p 1/p! sum lambda^|l| mu^(p-|l|) int f_p (e^H - 1)^p`, where the
/// correlation functions of the toy model vanish on coinciding atoms. The
/// series is summed until its terms fall below `1e-18` relative, or up to order 12.
pub fn verify_cgf_identity(toy: &ToyModel, h: &crate::statistics::phase::PhaseFunction) -> Result<CgfCheck, CumulantError> {
    toy.validate()?;
    let k = toy.atoms.len();
    let hv: Vec<f64> = toy.atoms.iter().map(|p| h.eval(p)).collect();
    let direct = toy
        .outcomes
        .iter()
        .map(|&(m, p)| p * (0..k).filter(|i| m & (1 << i) != 0).map(|i| hv[i]).sum::<f64>().exp())
        .sum::<f64>()
        .ln();
    let f: Vec<f64> = hv.iter().map(|x| x.exp_m1()).collect();
    let scale: Vec<f64> = toy.atoms.iter().map(|p| if p.tag == 1 { toy.lambda } else { toy.mu }).collect();
    let mut expansion = 0.0;
    let mut used = 0;
    for p in 1..=MAX_ORDER {
        let mut order_sum = 0.0;
        for mult in multiplicities(k, p) {
            let tuple: Vec<usize> = mult.iter().enumerate().flat_map(|(a, &c)| std::iter::repeat_n(a, c)).collect();
            // Normalized correlation F_p on sub-tuples: zero on repeated atoms.
            let corr = |m: u32| -> f64 {
                let mut set = 0u32;
                let mut norm = 1.0;
                for (pos, &a) in tuple.iter().enumerate() {
                    if m & (1 << pos) != 0 {
                        if set & (1 << a) != 0 {
                            return 0.0;
                        }
                        set |= 1 << a;
                        norm *= scale[a];
                    }
                }
                toy.rho(set) / norm
            };
            let fp = top_cumulant_recursive(p, corr)?;
            let mut w = fp;
            for (a, &c) in mult.iter().enumerate() {
                w *= (scale[a] * f[a]).powi(c as i32) / factorial(c) as f64;
            }
            order_sum += w;
        }
        expansion += order_sum;
        used = p;
        if order_sum.abs() < 1e-18 * expansion.abs().max(1e-3) && p >= 2 {
            break;
        }
    }
    Ok(CgfCheck { direct, expansion, residual: (direct - expansion).abs(), max_order: used })
}

/// Multiplicity vectors of `k` atoms with total `p`.
fn multiplicities(k: usize, p: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, rem: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k - 1 {
            cur.push(rem);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for c in 0..=rem {
            cur.push(c);
            rec(k, rem - c, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, p, &mut Vec::new(), &mut out);
    out
}
