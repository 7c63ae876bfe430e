pub mod gdm;
pub mod hmm;
pub mod mesh;
pub mod model;
pub mod p1;
pub mod quadrature;
pub mod scheme;
pub mod solver;
pub mod sparse;
pub mod verify;
pub mod vtk;
