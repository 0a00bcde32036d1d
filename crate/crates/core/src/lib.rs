//! Exact symbolic engine for the blowup tower over a Grassmannian chart:
//! builds the birational local model from the primary Pluecker relations,
//! runs the ordered theta/wp/eth blowup sequences with full chart
//! bookkeeping, transports coordinate-section schemes through the tower,
//! and certifies smoothness of the result by Jacobian rank checks over
//! finite fields.

pub mod chart;
pub mod gamma;
pub mod indices;
pub mod model;
pub mod points;
pub mod poly;
pub mod tower;
pub mod verify;
