//! The tensor engine in isolation: build a small graph on the tape, run
//! backward, and confirm the analytic gradients against central finite
//! differences.

use biff::tensor::{check_backward_vs_fd, ParamSet, Tape, Tensor};

fn main() {
    // y = relu(x . w1) . w2, loss = mean(y)
    let mut params = ParamSet::new();
    let w1 = params.add("w1", Tensor::new(vec![0.4, -0.2, 0.1, 0.7, -0.5, 0.33], &[2, 3]).unwrap());
    let w2 = params.add("w2", Tensor::new(vec![0.2, -0.9, 0.5], &[3, 1]).unwrap());
    let x = Tensor::new(vec![1.0, 2.0, -1.5, 0.5], &[2, 2]).unwrap();

    let mut tape = Tape::new();
    let xid = tape.constant(&x);
    let w1id = tape.param(&params, w1);
    let w2id = tape.param(&params, w2);
    let h = tape.matmul(xid, w1id).unwrap();
    let h = tape.relu(h);
    let y = tape.matmul(h, w2id).unwrap();
    let loss = tape.mean_all(y);
    println!("loss = {:.6}", tape.data(loss)[0]);

    tape.backward(loss, &mut params).unwrap();
    println!("dloss/dw1 = {:?}", params.get(w1).grad);
    println!("dloss/dw2 = {:?}", params.get(w2).grad);

    // the same graph under the finite-difference harness
    let report = check_backward_vs_fd(
        &mut params,
        |ps, t| {
            let xid = t.constant(&x);
            let w1 = t.param(ps, w1);
            let w2 = t.param(ps, w2);
            let h = t.matmul(xid, w1)?;
            let h = t.relu(h);
            let y = t.matmul(h, w2)?;
            Ok(t.mean_all(y))
        },
        1e-5,
        1e-4,
        None,
        0,
    )
    .unwrap();
    println!("gradient check: {report}");
}
