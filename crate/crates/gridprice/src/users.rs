//! Price-taking users with strictly convex disutility.
//!
//! Each user balances a private disutility `f_i` against the payment
//! `p_i x_i`, so the demand it reports for a posted price is the unique
//! stationary point of `f_i(x) + p_i x`. For strictly convex `f_i` that
//! best response is the inverse gradient evaluated at `-p_i`: a strictly
//! decreasing, continuously differentiable function of the price. The
//! mechanism only ever interacts with users through this map, which is
//! what keeps the users' cost functions private.

use crate::dispatch::DemandProfile;
use crate::dynamics::PriceProfile;
use crate::grid::GridCase;

/// A strictly convex, twice continuously differentiable disutility.
///
/// `inverse_gradient` must invert `gradient` exactly in real arithmetic;
/// the default [`best_response`](Disutility::best_response) relies on it.
pub trait Disutility {
    fn value(&self, x: f64) -> f64;
    fn gradient(&self, x: f64) -> f64;
    fn inverse_gradient(&self, g: f64) -> f64;
    /// Second derivative at `x`; strictly positive by assumption.
    fn curvature(&self, x: f64) -> f64;

    /// The unique minimizer of `f(x) + price * x`.
    fn best_response(&self, price: f64) -> f64 {
        self.inverse_gradient(-price)
    }
}

/// The quadratic disutility `a (x - xbar)^2` used in the experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticDisutility {
    /// Target consumption in MW.
    pub xbar: f64,
    /// Curvature coefficient in $/MW^2 h, strictly positive.
    pub a: f64,
}

impl QuadraticDisutility {
    pub fn new(xbar: f64, a: f64) -> Self {
        assert!(a > 0.0, "curvature must be strictly positive");
        QuadraticDisutility { xbar, a }
    }
}

impl Disutility for QuadraticDisutility {
    fn value(&self, x: f64) -> f64 {
        let d = x - self.xbar;
        self.a * d * d
    }

    fn gradient(&self, x: f64) -> f64 {
        2.0 * self.a * (x - self.xbar)
    }

    fn inverse_gradient(&self, g: f64) -> f64 {
        self.xbar + g / (2.0 * self.a)
    }

    fn curvature(&self, _x: f64) -> f64 {
        2.0 * self.a
    }
}

/// Errors from profile-level user operations.
#[derive(Debug, thiserror::Error)]
pub enum UserError {
    #[error("profile length {got} does not match user count {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// An ordered collection of users, aligned with the demand/price indexing.
#[derive(Debug, Clone)]
pub struct UserSet<D: Disutility = QuadraticDisutility> {
    users: Vec<D>,
}

impl UserSet<QuadraticDisutility> {
    /// Build the quadratic user set described by a case file.
    pub fn from_case(case: &GridCase) -> Self {
        UserSet {
            users: case
                .users
                .iter()
                .map(|u| QuadraticDisutility::new(u.xbar, u.a))
                .collect(),
        }
    }
}

impl<D: Disutility> UserSet<D> {
    pub fn new(users: Vec<D>) -> Self {
        assert!(!users.is_empty(), "user set must be nonempty");
        UserSet { users }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn user(&self, i: usize) -> &D {
        &self.users[i]
    }

    /// Elementwise best response to a price profile.
    pub fn best_response_profile(&self, prices: &PriceProfile) -> Result<DemandProfile, UserError> {
        self.check_len(prices.0.len())?;
        Ok(DemandProfile(
            self.users
                .iter()
                .zip(&prices.0)
                .map(|(u, &p)| u.best_response(p))
                .collect(),
        ))
    }

    /// Gradient of each disutility at the given demand.
    pub fn gradient_profile(&self, demand: &DemandProfile) -> Result<Vec<f64>, UserError> {
        self.check_len(demand.0.len())?;
        Ok(self
            .users
            .iter()
            .zip(&demand.0)
            .map(|(u, &x)| u.gradient(x))
            .collect())
    }

    /// Sum of disutilities; the user-side half of the welfare objective.
    pub fn total_disutility(&self, demand: &DemandProfile) -> Result<f64, UserError> {
        self.check_len(demand.0.len())?;
        Ok(self
            .users
            .iter()
            .zip(&demand.0)
            .map(|(u, &x)| u.value(x))
            .sum())
    }

    fn check_len(&self, got: usize) -> Result<(), UserError> {
        if got != self.users.len() {
            Err(UserError::LengthMismatch {
                expected: self.users.len(),
                got,
            })
        } else {
            Ok(())
        }
    }
}
