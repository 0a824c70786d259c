pub mod audit;
pub mod distill;
pub mod ensemble;
pub mod fit;
pub mod init;
pub mod recipe;
pub mod report;
pub mod run;
pub mod search;
pub mod variance;
