//! Policy improvement for ergodic risk-sensitive control of controlled
//! diffusions, posed as certified Perron–Frobenius problems on monotone
//! finite-difference grids and cross-checked by Monte Carlo.

pub mod expr;
pub mod genmat;
pub mod lattice;
pub mod model;
pub mod oracle;
pub mod howard;
pub mod perron;
pub mod sde;
