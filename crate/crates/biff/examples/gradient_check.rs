//! Run the finite-difference gradient suite: every op plus the full
//! encoder -> HFIF -> LFBF -> loss graph at toy dimensions.

use biff::checks::{all_passed, gradcheck_suite, render_table};

fn main() {
    let results = gradcheck_suite(0);
    print!("{}", render_table(&results));
    assert!(all_passed(&results));
}
