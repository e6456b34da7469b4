use super::Cone;

/// Euclidean projection onto a second-order cone `{(t, v) : ‖v‖ ≤ t}`.
#[inline]
pub(crate) fn project_soc(block: &mut [f64]) {
    let (head, tail) = block.split_first_mut().expect("cone blocks are non-empty");
    let t = *head;
    let norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= t {
        return;
    }
    if norm <= -t {
        *head = 0.0;
        tail.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let scale = 0.5 * (t + norm);
    *head = scale;
    let f = scale / norm;
    tail.iter_mut().for_each(|v| *v *= f);
}

/// Projects `v` onto the cone product in place.
pub(crate) fn project_primal(cones: &[Cone], v: &mut [f64]) {
    let mut at = 0;
    for cone in cones {
        let d = cone.dim();
        let block = &mut v[at..at + d];
        match cone {
            Cone::Zero(_) => block.iter_mut().for_each(|x| *x = 0.0),
            Cone::SecondOrder(_) => project_soc(block),
        }
        at += d;
    }
}

/// Largest violation of cone membership: max-abs on zero blocks,
/// `‖tail‖ - head` on second-order blocks. Zero means feasible.
pub(crate) fn primal_violation(cones: &[Cone], v: &[f64]) -> f64 {
    let mut at = 0;
    let mut worst: f64 = 0.0;
    for cone in cones {
        let d = cone.dim();
        let block = &v[at..at + d];
        let viol = match cone {
            Cone::Zero(_) => block.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            Cone::SecondOrder(_) => {
                let norm = block[1..].iter().map(|x| x * x).sum::<f64>().sqrt();
                (norm - block[0]).max(0.0)
            }
        };
        worst = worst.max(viol);
        at += d;
    }
    worst
}

/// Violation of `z ∈ K*`: second-order cones are self-dual and the dual
/// of a zero cone is the whole space.
pub(crate) fn dual_violation(cones: &[Cone], z: &[f64]) -> f64 {
    let mut at = 0;
    let mut worst: f64 = 0.0;
    for cone in cones {
        let d = cone.dim();
        if let Cone::SecondOrder(_) = cone {
            let norm = z[at + 1..at + d].iter().map(|x| x * x).sum::<f64>().sqrt();
            worst = worst.max(norm - z[at]);
        }
        at += d;
    }
    worst
}

/// Euclidean distance of each block to the cone, max over blocks.
pub(crate) fn distance_primal(cones: &[Cone], v: &[f64]) -> f64 {
    let mut p = v.to_vec();
    project_primal(cones, &mut p);
    block_max_dist(cones, v, &p)
}

/// Distance to the polar cone (zero blocks: whole space; second-order: -SOC).
pub(crate) fn distance_polar(cones: &[Cone], v: &[f64]) -> f64 {
    let mut p: Vec<f64> = v.iter().map(|x| -x).collect();
    let mut at = 0;
    for cone in cones {
        let d = cone.dim();
        match cone {
            Cone::Zero(_) => p[at..at + d]
                .iter_mut()
                .zip(&v[at..at + d])
                .for_each(|(q, x)| *q = *x),
            Cone::SecondOrder(_) => {
                project_soc(&mut p[at..at + d]);
                p[at..at + d].iter_mut().for_each(|q| *q = -*q);
            }
        }
        at += d;
    }
    block_max_dist(cones, v, &p)
}

fn block_max_dist(cones: &[Cone], v: &[f64], p: &[f64]) -> f64 {
    let mut at = 0;
    let mut worst: f64 = 0.0;
    for cone in cones {
        let d = cone.dim();
        let dist = v[at..at + d]
            .iter()
            .zip(&p[at..at + d])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(dist);
        at += d;
    }
    worst
}
