//! Reverse-mode gradients: a hand-built graph, and the full objective of a
//! flow checked against central differences.
//!
//! cargo run --release --example gradients

use nhpp_flow::diffkit::{GraphBuilder, ParamVector};
use nhpp_flow::estimate::nll_gradient;
use nhpp_flow::rng;
use nhpp_flow::{DomainBounds, PointPattern, SublayerKind, TransportStack};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // f(x, y) = x * sigmoid(y) + log(x)
    let mut b = GraphBuilder::new();
    let x = b.input();
    let y = b.input();
    let s = b.sigmoid(y);
    let p = b.mul(x, s);
    let l = b.log(x);
    let f = b.add(p, l);
    let mut graph = b.finish(f, 0);
    let params = ParamVector::default();
    let v = graph.forward_eval(&params, &[2.0, 0.5])?;
    println!("f(2, 0.5) = {v:.6}");

    let mut r = rng::stream(1, 0);
    let stack = TransportStack::random_init(2, 2, SublayerKind::Naf { m: 8 }, 8, &mut r)?;
    let coords = (0..20).map(|_| r.random_range(0.05..0.95)).collect();
    let pts = PointPattern::new(2, coords, DomainBounds::unit(2))?;
    let (obj, grad) = nll_gradient(&stack, &pts)?;
    println!("objective {obj:.6}, {} parameters", grad.len());

    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in (0..grad.len()).step_by(grad.len() / 12) {
        let mut up = stack.clone();
        up.params_mut().values_mut()[i] += h;
        let mut dn = stack.clone();
        dn.params_mut().values_mut()[i] -= h;
        let fd = (nll_gradient(&up, &pts)?.0 - nll_gradient(&dn, &pts)?.0) / (2.0 * h);
        println!("  d/dp{i:<4} graph {:12.6}  differences {fd:12.6}", grad[i]);
        worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1e-3));
    }
    println!("worst relative gap {worst:.2e}");
    Ok(())
}
