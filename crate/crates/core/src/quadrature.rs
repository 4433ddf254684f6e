//! Symmetric Gauss rules on triangles, in barycentric coordinates with
//! weights summing to one (multiply by the triangle area).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TriangleRule {
    /// Rule exact for polynomials of total degree `order`. Supported orders
    /// are 1, 2, 3 and 5; every node lies strictly inside the triangle.
    pub fn of_order(order: usize) -> Result<Self> {
        match order {
            1 => Ok(Self {
                points: vec![[1.0 / 3.0; 3]],
                weights: vec![1.0],
            }),
            2 => {
                let (a, b) = (2.0 / 3.0, 1.0 / 6.0);
                Ok(Self {
                    points: vec![[a, b, b], [b, a, b], [b, b, a]],
                    weights: vec![1.0 / 3.0; 3],
                })
            }
            // degree-4 six-point rule; covers order 3 without negative weights
            3 => {
                let a1 = 0.445_948_490_915_965;
                let b1 = 1.0 - 2.0 * a1;
                let w1 = 0.223_381_589_678_011;
                let a2 = 0.091_576_213_509_771;
                let b2 = 1.0 - 2.0 * a2;
                let w2 = 0.109_951_743_655_322;
                Ok(Self {
                    points: vec![
                        [b1, a1, a1],
                        [a1, b1, a1],
                        [a1, a1, b1],
                        [b2, a2, a2],
                        [a2, b2, a2],
                        [a2, a2, b2],
                    ],
                    weights: vec![w1, w1, w1, w2, w2, w2],
                })
            }
            5 => {
                let s15 = 15f64.sqrt();
                let a1 = (6.0 - s15) / 21.0;
                let b1 = (9.0 + 2.0 * s15) / 21.0;
                let w1 = (155.0 - s15) / 1200.0;
                let a2 = (6.0 + s15) / 21.0;
                let b2 = (9.0 - 2.0 * s15) / 21.0;
                let w2 = (155.0 + s15) / 1200.0;
                Ok(Self {
                    points: vec![
                        [1.0 / 3.0; 3],
                        [b1, a1, a1],
                        [a1, b1, a1],
                        [a1, a1, b1],
                        [b2, a2, a2],
                        [a2, b2, a2],
                        [a2, a2, b2],
                    ],
                    weights: vec![9.0 / 40.0, w1, w1, w1, w2, w2, w2],
                })
            }
            _ => Err(Error::InvalidArgument(format!(
                "quadrature order {order} unsupported (use 1, 2, 3 or 5)"
            ))),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Physical coordinates of the nodes on the triangle `p`.
    pub fn map(&self, p: &[[f64; 2]; 3]) -> impl Iterator<Item = ([f64; 2], [f64; 3], f64)> + '_ {
        let p = *p;
        self.points.iter().zip(&self.weights).map(move |(l, &w)| {
            let x = [
                l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
                l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
            ];
            (x, *l, w)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // ∫_T λ0^a λ1^b λ2^c = 2|T| a! b! c! / (a+b+c+2)!
    fn exact_monomial(a: u32, b: u32, c: u32) -> f64 {
        let f = |n: u32| (1..=n).map(f64::from).product::<f64>();
        2.0 * f(a) * f(b) * f(c) / f(a + b + c + 2)
    }

    #[test]
    fn rules_integrate_monomials_exactly_up_to_their_order() {
        for order in [1usize, 2, 3, 5] {
            let rule = TriangleRule::of_order(order).unwrap();
            assert!((rule.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for a in 0..=order as u32 {
                for b in 0..=(order as u32 - a) {
                    for c in 0..=(order as u32 - a - b) {
                        let q: f64 = rule
                            .points
                            .iter()
                            .zip(&rule.weights)
                            .map(|(l, w)| {
                                w * l[0].powi(a as i32) * l[1].powi(b as i32) * l[2].powi(c as i32)
                            })
                            .sum();
                        let exact = exact_monomial(a, b, c);
                        assert!(
                            (q - exact).abs() < 1e-12,
                            "order {order}, ({a},{b},{c}): {q} vs {exact}"
                        );
                    }
                }
            }
            assert!(rule.points.iter().all(|l| l.iter().all(|&x| x > 0.0)));
        }
    }

    #[test]
    fn unsupported_order_is_an_error() {
        assert!(TriangleRule::of_order(4).is_err());
    }
}
