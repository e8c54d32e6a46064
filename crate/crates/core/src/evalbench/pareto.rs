/// Objective triple (Ū, D̄, B̄); all three are maximized.
pub type Objectives = [f64; 3];

/// `a` dominates `b`: no worse everywhere and strictly better somewhere.
pub fn dominates(a: &Objectives, b: &Objectives) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Indices of the points no other point dominates, in input order.
pub fn pareto_front(points: &[Objectives]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}
