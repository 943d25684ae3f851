//! Parsing of `--values` lists.
//!
//! Accepted forms:
//! - `0.1,0.2,0.5` explicit list
//! - `0..1:0.1` arithmetic range with step, both ends included
//! - `1e-1..1e-8` decades between two powers of ten
//! - `0.01..0.30` range stepping by the last written decimal place

fn decimals(s: &str) -> Option<usize> {
    if s.contains(['e', 'E']) {
        return None;
    }
    Some(s.split_once('.').map_or(0, |(_, frac)| frac.len()))
}

fn number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

fn round_to(v: f64, places: Option<usize>) -> f64 {
    match places {
        Some(p) => format!("{v:.p$}").parse().unwrap(),
        None => v,
    }
}

fn power_of_ten(v: f64) -> Option<i32> {
    if v <= 0.0 {
        return None;
    }
    let k = v.log10().round() as i32;
    (format!("1e{k}").parse::<f64>().unwrap() == v).then_some(k)
}

fn arithmetic(a: f64, b: f64, step: f64, places: Option<usize>) -> Result<Vec<f64>, String> {
    if !(step > 0.0) {
        return Err("range step must be positive".into());
    }
    let count = ((b - a).abs() / step + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(format!("range yields {count} values"));
    }
    let dir = if b >= a { 1.0 } else { -1.0 };
    Ok((0..count).map(|i| round_to(a + dir * step * i as f64, places)).collect())
}

pub fn parse_values(text: &str) -> Result<Vec<f64>, String> {
    let text = text.trim();
    if text.is_empty() {
        return Err("empty value list".into());
    }
    let Some((lo, rest)) = text.split_once("..") else {
        return text.split(',').map(number).collect();
    };
    let (hi, step) = match rest.split_once(':') {
        Some((hi, step)) => (hi, Some(step)),
        None => (rest, None),
    };
    let (a, b) = (number(lo)?, number(hi)?);
    if let Some(step) = step {
        let places = [lo, hi, step]
            .iter()
            .map(|s| decimals(s.trim()))
            .collect::<Option<Vec<_>>>()
            .map(|d| d.into_iter().max().unwrap());
        return arithmetic(a, b, number(step)?, places);
    }
    if let (Some(ka), Some(kb)) = (power_of_ten(a), power_of_ten(b)) {
        if ka != kb {
            let ks: Vec<i32> = if ka < kb { (ka..=kb).collect() } else { (kb..=ka).rev().collect() };
            return Ok(ks.into_iter().map(|k| format!("1e{k}").parse().unwrap()).collect());
        }
    }
    match (decimals(lo.trim()), decimals(hi.trim())) {
        (Some(da), Some(db)) => {
            let places = da.max(db);
            arithmetic(a, b, round_to(10f64.powi(-(places as i32)), Some(places)), Some(places))
        }
        _ => Err(format!("cannot infer a step for `{text}`; write it as `{lo}..{hi}:STEP`")),
    }
}
