use crate::error::{Error, Result};
use crate::grid::{ClassMap, DepthMap, Mask};

/// Mean intersection-over-union over the classes present in either map.
/// Classes absent from both maps are left out of the mean.
pub fn miou(gt: &ClassMap, pred: &ClassMap, class_count: usize) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Domain("mIOU of an empty image".into()));
    }
    gt.check_dims(pred, "mIOU prediction")?;
    let mut inter = vec![0usize; class_count];
    let mut union = vec![0usize; class_count];
    for (&g, &p) in gt.as_slice().iter().zip(pred.as_slice()) {
        let (g, p) = (g as usize, p as usize);
        if g >= class_count || p >= class_count {
            return Err(Error::Data(format!("class id {} out of range for {class_count} classes", g.max(p))));
        }
        union[g] += 1;
        if g == p {
            inter[g] += 1;
        } else {
            union[p] += 1;
        }
    }
    let (sum, n) = inter
        .iter()
        .zip(&union)
        .filter(|(_, &u)| u > 0)
        .fold((0.0, 0usize), |(s, n), (&i, &u)| (s + i as f64 / u as f64, n + 1));
    Ok(sum / n as f64)
}

/// Mean absolute depth difference in meters.
pub fn depth_mae(gt: &DepthMap, pred: &DepthMap) -> Result<f64> {
    gt.check_dims(pred, "depth prediction")?;
    if gt.is_empty() {
        return Err(Error::Domain("depth error of an empty image".into()));
    }
    let sum: f64 = gt.as_slice().iter().zip(pred.as_slice()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / gt.len() as f64)
}

/// Fraction of pixels whose class matches.
pub fn pixel_accuracy(gt: &ClassMap, pred: &ClassMap) -> Result<f64> {
    gt.check_dims(pred, "class prediction")?;
    if gt.is_empty() {
        return Err(Error::Domain("accuracy of an empty image".into()));
    }
    let hits = gt.as_slice().iter().zip(pred.as_slice()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Mean pairwise disagreement rate among semantic samples, split into
/// `(inside mask, outside mask)`. A region with no pixels scores 0.
pub fn diversity_score(samples: &[ClassMap], unobserved: &Mask) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Domain(format!("diversity needs at least 2 samples, got {}", samples.len())));
    }
    for s in samples {
        s.check_dims(unobserved, "diversity mask")?;
    }
    let mask = unobserved.as_slice();
    let n_in = mask.iter().filter(|&&m| m).count();
    let n_out = mask.len() - n_in;
    let (mut d_in, mut d_out, mut pairs) = (0.0, 0.0, 0usize);
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let (mut c_in, mut c_out) = (0usize, 0usize);
            for ((x, y), &m) in a.as_slice().iter().zip(b.as_slice()).zip(mask) {
                if x != y {
                    if m {
                        c_in += 1;
                    } else {
                        c_out += 1;
                    }
                }
            }
            if n_in > 0 {
                d_in += c_in as f64 / n_in as f64;
            }
            if n_out > 0 {
                d_out += c_out as f64 / n_out as f64;
            }
            pairs += 1;
        }
    }
    Ok((d_in / pairs as f64, d_out / pairs as f64))
}
