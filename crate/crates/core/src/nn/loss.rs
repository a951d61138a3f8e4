pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const EPS: f64 = 1e-12;

/// Binary cross-entropy of probability `p` against label `y`.
pub fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// d bce / d p.
pub fn bce_grad(p: f64, y: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    (p - y) / (p * (1.0 - p))
}

/// Cross-entropy on a logit, stable for large |z|. Returns `(loss, d loss / d z)`.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    (loss, sigmoid(z) - y)
}
