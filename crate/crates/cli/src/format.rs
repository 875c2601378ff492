//! Human-readable number formatting: 12 significant digits.

use ergolq::{DMatrix, DVector};

/// `x` with 12 significant digits, `%g` style.
pub fn num(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        let s = format!("{x:.11e}");
        let (mant, e) = s.split_once('e').expect("exponent present");
        format!("{}e{e}", trim(mant.to_string()))
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// `[a, b; c, d]`, rows separated by `;`.
pub fn mat(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> =
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| num(m[(i, j)])).collect::<Vec<_>>().join(", ")).collect();
    format!("[{}]", rows.join("; "))
}

pub fn vec(v: &DVector<f64>) -> String {
    format!("[{}]", v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(num(2f64.sqrt() - 1.0), "0.414213562373");
        assert_eq!(num(-1.0), "-1");
        assert_eq!(num(1234.5), "1234.5");
        assert_eq!(num(1.5e-9), "1.5e-9");
        assert_eq!(num(3.0e15), "3e15");
        assert_eq!(num(0.0), "0");
    }
}
