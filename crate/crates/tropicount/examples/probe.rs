use tropicount::enumerate::*;
use std::time::Instant;

fn main() {
    for (d, g) in [(1i64, 0i64), (2, 0), (3, 1), (3, 0)] {
        let t0 = Instant::now();
        let problem = EnumerationProblem::degree(d, g, 0);
        let r = count_complex(&problem).unwrap();
        println!("degree {d} genus {g}: total {} ({} curves) in {:?}", r.total_complex, r.curves.len(), t0.elapsed());
    }
}
