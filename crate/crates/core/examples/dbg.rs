use sdcut::verify::random_mixed_instance;
use sdcut::model::PrimalView;

fn main() {
    let bqp = random_mixed_instance(8, 9006).unwrap();
    for gamma in [1e2, 1e3, 1e4] {
        let p = sdcut::relax(&bqp, gamma).unwrap();
        let report = sdcut::solvers::solve_qn(&p, &sdcut::solvers::QnConfig::default(), None).unwrap();
        let eval = p.evaluate_primal(PrimalView::Factor(&report.x_star)).unwrap();
        let objective = p.scale.cost * eval.objective + p.objective_offset;
        println!("gamma {gamma:_>8}: p(X*) = {objective:.12}, d* = {:.12}, iters {}, term {:?}, eq_res {:.2e}",
            report.d_star, report.iterations, report.termination,
            eval.eq_residuals.iter().map(|r| r.abs()).fold(0.0f64, f64::max));
    }
}
