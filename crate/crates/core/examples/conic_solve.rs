//! Maximizes λ₁ + λ₂ subject to ‖λ₁v₁ − λ₂v₂‖ ≤ d with both solver backends.

use isonrsfm::conic::{self, Affine, ProgramBuilder};
use isonrsfm::error::Result;

fn main() -> Result<()> {
    let (v1, v2, d) = ([-0.1, 0.05, 1.0], [0.1, 0.0, 1.0], 0.2);
    let mut pb = ProgramBuilder::new();
    let l1 = pb.add_var(-1.0);
    let l2 = pb.add_var(-1.0);
    let head = pb.add_var(0.0);
    pb.equality(&Affine::new(vec![(head, 1.0)], -d));
    let tail: Vec<Affine> = (0..3)
        .map(|r| Affine::new(vec![(l1, v1[r]), (l2, -v2[r])], 0.0))
        .collect();
    pb.second_order(&Affine::var(head), &tail);
    let program = pb.build()?;
    for backend in ["reference", "clarabel"] {
        let r = conic::solve_backend(
            &program,
            backend,
            conic::DEFAULT_TOL,
            conic::DEFAULT_MAX_ITER,
        )?;
        println!(
            "{backend:>9}: {:?} after {} iterations, λ = ({:.6}, {:.6}), objective {:.8}",
            r.status, r.iterations, r.x[l1], r.x[l2], -r.objective
        );
    }
    Ok(())
}
