use super::{SolverError, VelocityGrid};
use crate::vec3::Vec3;
use std::sync::Arc;

/// Whether a field is a function (`phi`-like), a density (`M phi`-like) or
/// the symmetric `M^{1/2} phi` representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldForm {
    Function,
    Density,
    SymmetricR,
}

impl FieldForm {
    fn tag(self) -> &'static str {
        match self {
            FieldForm::Function => "function",
            FieldForm::Density => "density",
            FieldForm::SymmetricR => "symmetric-r",
        }
    }

    fn from_tag(s: &str) -> Option<Self> {
        match s {
            "function" => Some(FieldForm::Function),
            "density" => Some(FieldForm::Density),
            "symmetric-r" => Some(FieldForm::SymmetricR),
            _ => None,
        }
    }
}

/// Values on a velocity grid for one spatial Fourier mode `exp(2 pi i k.x)`.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub grid: Arc<VelocityGrid>,
    pub form: FieldForm,
    pub mode: [i32; 3],
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl PartialEq for VelocityField {
    fn eq(&self, o: &Self) -> bool {
        self.form == o.form && self.mode == o.mode && self.re == o.re && self.im == o.im
    }
}

impl VelocityField {
    pub fn from_values(grid: Arc<VelocityGrid>, form: FieldForm, re: Vec<f64>) -> Result<Self, SolverError> {
        if re.len() != grid.len() {
            return Err(SolverError::GridMismatch(re.len(), grid.len()));
        }
        if re.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::Format("non-finite field value".into()));
        }
        let im = vec![0.0; re.len()];
        Ok(VelocityField { grid, form, mode: [0; 3], re, im })
    }

    pub fn from_fn(grid: Arc<VelocityGrid>, form: FieldForm, f: impl Fn(&Vec3) -> f64) -> Self {
        let re = grid.points().iter().map(&f).collect();
        let im = vec![0.0; grid.len()];
        VelocityField { grid, form, mode: [0; 3], re, im }
    }

    pub fn constant(grid: Arc<VelocityGrid>, c: f64) -> Self {
        Self::from_fn(grid, FieldForm::Function, |_| c)
    }

    pub fn maxwellian(grid: Arc<VelocityGrid>) -> Self {
        let re = grid.maxwellian().to_vec();
        Self::from_values(grid, FieldForm::Density, re).expect("grid sized")
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.mode == [0; 3]
    }

    pub fn expect_form(&self, form: FieldForm) -> Result<(), SolverError> {
        if self.form != form {
            return Err(SolverError::FormMismatch { expected: form, got: self.form });
        }
        Ok(())
    }

    /// Same values reinterpreted in another form, with the Maxwellian factors
    /// applied.
    pub fn to_form(&self, form: FieldForm) -> VelocityField {
        let factor = |f: FieldForm| -> Vec<f64> {
            match f {
                FieldForm::Function => vec![1.0; self.len()],
                FieldForm::Density => self.grid.maxwellian().to_vec(),
                FieldForm::SymmetricR => self.grid.maxwellian_sqrt().to_vec(),
            }
        };
        let from = factor(self.form);
        let to = factor(form);
        let conv = |x: &[f64]| x.iter().zip(from.iter().zip(&to)).map(|(a, (f, t))| a * t / f).collect();
        VelocityField { grid: self.grid.clone(), form, mode: self.mode, re: conv(&self.re), im: conv(&self.im) }
    }

    /// `int M phi f dv` (function form), `int chi f dv` (density form) or
    /// `int M^{1/2} R f dv`; the spatial average of a nonzero mode vanishes.
    pub fn integrate_density(&self, f: impl Fn(&Vec3) -> f64) -> f64 {
        if !self.is_homogeneous() {
            return 0.0;
        }
        let g = &self.grid;
        let w: &[f64] = match self.form {
            FieldForm::Function => g.maxwellian(),
            FieldForm::Density => &[],
            FieldForm::SymmetricR => g.maxwellian_sqrt(),
        };
        let mut terms: Vec<f64> = (0..self.len())
            .map(|i| {
                let mi = if w.is_empty() { 1.0 } else { w[i] };
                mi * self.re[i] * f(&g.points()[i])
            })
            .collect();
        terms.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        g.weight * terms.iter().sum::<f64>()
    }

    pub fn mass(&self) -> f64 {
        self.integrate_density(|_| 1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.re.iter().chain(&self.im).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn min_re(&self) -> f64 {
        self.re.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_re(&self) -> f64 {
        self.re.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV snapshot: a `form,mode_0,mode_1,mode_2,m,v_max,beta` metadata pair
    /// of lines followed by `v_0,v_1,v_2,re,im` rows.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::from("form,mode_0,mode_1,mode_2,m,v_max,beta\n");
        s += &format!("{},{},{},{},{},{:e},{:e}\n", self.form.tag(), self.mode[0], self.mode[1], self.mode[2], g.m, g.v_max, g.beta);
        s += "v_0,v_1,v_2,re,im\n";
        for (i, v) in g.points().iter().enumerate() {
            s += &format!("{:e},{:e},{:e},{:e},{:e}\n", v[0], v[1], v[2], self.re[i], self.im[i]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, SolverError> {
        let bad = |m: &str| SolverError::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("form,mode_0,mode_1,mode_2,m,v_max,beta") {
            return Err(bad("missing field metadata header"));
        }
        let meta: Vec<&str> = lines.next().ok_or_else(|| bad("missing metadata"))?.split(',').map(str::trim).collect();
        if meta.len() != 7 {
            return Err(bad("metadata needs 7 fields"));
        }
        let form = FieldForm::from_tag(meta[0]).ok_or_else(|| bad("unknown form"))?;
        let int = |s: &str| s.parse::<i32>().map_err(|_| bad("bad integer"));
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let mode = [int(meta[1])?, int(meta[2])?, int(meta[3])?];
        let m = meta[4].parse::<usize>().map_err(|_| bad("bad m"))?;
        let grid = Arc::new(VelocityGrid::with_v_max(m, num(meta[6])?, num(meta[5])?)?);
        if lines.next().map(str::trim) != Some("v_0,v_1,v_2,re,im") {
            return Err(bad("missing row header"));
        }
        let mut re = Vec::with_capacity(grid.len());
        let mut im = Vec::with_capacity(grid.len());
        for (i, line) in lines.enumerate() {
            let f: Vec<f64> = line.split(',').map(|x| num(x.trim())).collect::<Result<_, _>>()?;
            if f.len() != 5 || i >= grid.len() {
                return Err(bad("bad row"));
            }
            let p = grid.points()[i];
            if (0..3).any(|k| (f[k] - p[k]).abs() > 1e-9 * (1.0 + p[k].abs())) || !f[3].is_finite() || !f[4].is_finite() {
                return Err(bad("row does not match the grid"));
            }
            re.push(f[3]);
            im.push(f[4]);
        }
        if re.len() != grid.len() {
            return Err(SolverError::GridMismatch(re.len(), grid.len()));
        }
        Ok(VelocityField { grid, form, mode, re, im })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forms_and_csv() {
        let g = Arc::new(VelocityGrid::new(15, 1.0).unwrap());
        let f = VelocityField::from_fn(g.clone(), FieldForm::Function, |v| 1.0 + v[0]);
        assert!((f.mass() - 1.0).abs() < 1e-6);
        let d = f.to_form(FieldForm::Density);
        assert!((d.mass() - f.mass()).abs() < 1e-14);
        let r = d.to_form(FieldForm::SymmetricR);
        assert!((r.mass() - f.mass()).abs() < 1e-14);
        let back = VelocityField::from_csv(&r.to_csv()).unwrap();
        assert_eq!(back, r);
        assert!(VelocityField::from_csv("nonsense").is_err());
        assert!(f.expect_form(FieldForm::Density).is_err());
    }
}
