//! Records a small computation on the tape, reads back its gradient and
//! compares it against central differences.

use add_core::diffcore::{finite_diff_check, Tape, Tensor};

pub fn run_example() -> add_core::Result<()> {
    let x = Tensor::<f64>::vector(vec![0.5, -1.25, 2.0]);

    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let sq = tape.square(v);
    let lse = tape.logsumexp(sq);
    let grad = tape.backward(lse)?.wrt(v);
    println!("f(x) = logsumexp(x^2) = {:.6}", tape.value(lse).item());
    println!("df/dx = {:?}", grad.data());

    let err = finite_diff_check(
        |t, v| {
            let sq = t.square(v);
            Ok(t.logsumexp(sq))
        },
        &x,
        1e-5,
    )?;
    println!("worst relative error against central differences: {err:.2e}");
    Ok(())
}

fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
