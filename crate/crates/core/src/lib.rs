pub mod factors;
pub mod words;
pub mod autos;
pub mod graphs;
pub mod lamination;
pub mod rays;
pub mod instance;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/words.md")]
    pub mod chapter1 {}
    #[doc = include_str!("../../../book/src/automorphisms.md")]
    pub mod chapter2 {}
    #[doc = include_str!("../../../book/src/train-tracks.md")]
    pub mod chapter3 {}
    #[doc = include_str!("../../../book/src/laminations.md")]
    pub mod chapter4 {}
    #[doc = include_str!("../../../book/src/rays.md")]
    pub mod chapter5 {}
    #[doc = include_str!("../../../book/src/instances.md")]
    pub mod chapter6 {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod chapter7 {}
}
