#include "cmvlq/riccati.hpp"

#include <string>

#include "cmvlq/error.hpp"

namespace cmvlq {

std::string_view to_string(Backend b) { return b == Backend::ode ? "ode" : "tree"; }

Backend parse_backend(std::string_view s) {
  if (s == "ode") return Backend::ode;
  if (s == "tree") return Backend::tree;
  throw Error(ErrorKind::invalid_argument,
              "backend must be 'ode' or 'tree', got '" + std::string(s) + "'");
}

DiscreteStep discrete_step(const Mat& A, const Mat& B, const Mat& S, const Mat& R,
                           const Mat& P_hat, double dt, const std::string& where) {
  const auto n = A.rows();
  DiscreteStep st;
  st.Abar = Mat::Identity(n, n) + dt * A;
  st.Bbar = dt * B;
  st.G = symmetrize(dt * R + st.Bbar.transpose() * P_hat * st.Bbar);
  st.M = st.Abar.transpose() * P_hat * st.Bbar + dt * S;
  st.G_llt.compute(st.G);
  bool ok = st.G_llt.info() == Eigen::Success;
  if (ok) {
    Vec diag = st.G_llt.matrixL().toDenseMatrix().diagonal();
    double scale = std::max(st.G.cwiseAbs().maxCoeff(), 1e-300);
    ok = diag.minCoeff() * diag.minCoeff() > 1e-14 * scale;
  }
  if (!ok)
    throw Error(ErrorKind::numerical,
                "R dt + B^T P B is singular or indefinite at " + where +
                    "; the coefficients violate the convexity assumption");
  return st;
}

namespace {

struct QuadraticModel {
  Mat A, B, S, Q, R;
};

// Right-hand side in reversed time s = T − t: dP/ds = PÂ + ÂᵀP − PBR⁻¹BᵀP + Q − SR⁻¹Sᵀ.
struct RiccatiRhs {
  Mat Ahat, BRB, Qhat;

  explicit RiccatiRhs(const QuadraticModel& m) {
    Eigen::LLT<Mat> R(m.R);
    if (R.info() != Eigen::Success)
      throw Error(ErrorKind::numerical, "R is not positive definite");
    Ahat = m.A - m.B * R.solve(m.S.transpose());
    BRB = m.B * R.solve(m.B.transpose());
    Qhat = m.Q - m.S * R.solve(m.S.transpose());
  }
  Mat operator()(const Mat& P) const {
    Mat PA = P * Ahat;
    return PA + PA.transpose() - P * BRB * P + Qhat;
  }
};

Mat rk4_step(const RiccatiRhs& f, const Mat& P, double h) {
  Mat k1 = f(P);
  Mat k2 = f(P + 0.5 * h * k1);
  Mat k3 = f(P + 0.5 * h * k2);
  Mat k4 = f(P + h * k3);
  return symmetrize(P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

template <class Model>
NodeField<Mat> solve_riccati(const Model& model, const Mat& terminal, const TimeGrid& grid,
                             Backend backend, bool deterministic, const char* name) {
  const int N = grid.steps;
  const double dt = grid.dt();
  const auto n = terminal.rows();
  if (backend == Backend::ode && !deterministic)
    throw Error(ErrorKind::invalid_argument,
                std::string("ODE backend requires deterministic coefficients for ") + name +
                    "; use the tree backend");
  if (backend == Backend::tree && N > kMaxTreeSteps)
    throw Error(ErrorKind::capacity, "tree backend supports at most " +
                                         std::to_string(kMaxTreeSteps) + " steps");

  NodeField<Mat> P(backend, grid, Mat::Zero(n, n));
  for (int j = 0; j < P.nodes(N); ++j) P.at(N, j) = terminal;
  for (int k = N - 1; k >= 0; --k) {
    if (backend == Backend::ode) {
      RiccatiRhs f(model(k, 0.0));
      P.at(k) = rk4_step(f, P.at(k + 1), dt);
      continue;
    }
    for (int j = 0; j < P.nodes(k); ++j) {
      QuadraticModel m = model(k, common_noise_value(grid, k, j));
      Mat P_hat = P.next_mean(k, j);
      DiscreteStep st = discrete_step(m.A, m.B, m.S, m.R, P_hat, dt,
                                      std::string(name) + " step " + std::to_string(k) +
                                          " node " + std::to_string(j));
      Mat val = st.Abar.transpose() * P_hat * st.Abar + dt * m.Q -
                st.M * st.G_llt.solve(st.M.transpose());
      P.at(k, j) = symmetrize(val);
    }
  }
  return P;
}

}  // namespace

RiccatiSolution solve_pi(const CoefficientSet& c, const TimeGrid& grid, Backend backend) {
  check_dimensions(c);
  auto model = [&](int k, double w0) {
    return QuadraticModel{c.A.at(k, grid.steps, w0), c.B.at(k, grid.steps, w0),
                          c.S.at(k, grid.steps, w0), c.Q.at(k, grid.steps, w0),
                          c.R.at(k, grid.steps, w0)};
  };
  bool det = c.A.deterministic() && c.B.deterministic() && c.S.deterministic() &&
             c.Q.deterministic() && c.R.deterministic();
  if (backend == Backend::ode && !c.deterministic()) det = false;
  return RiccatiSolution{solve_riccati(model, c.QT, grid, backend, det, "Pi")};
}

BarRiccatiSolution solve_l(const BarCoefficients& cb, const TimeGrid& grid, Backend backend) {
  auto model = [&](int k, double w0) {
    return QuadraticModel{cb.Abar.at(k, grid.steps, w0), cb.B.at(k, grid.steps, w0),
                          cb.Sbar.at(k, grid.steps, w0), cb.Qbar.at(k, grid.steps, w0),
                          cb.R.at(k, grid.steps, w0)};
  };
  return BarRiccatiSolution{
      solve_riccati(model, cb.QbarT, grid, backend, cb.deterministic(), "L")};
}

namespace {

struct OffsetRhs {
  Mat B, Sbar, Abar;
  Vec zetabar, b, varpi;
  Eigen::LLT<Mat> R;

  // dℓ/ds = (Abar − BR⁻¹(LB+S̄)ᵀ)ᵀℓ − (LB+S̄)R⁻¹ϖ + ζ̄ + Lb
  Vec operator()(const Mat& L, const Vec& ell) const {
    Mat LBS = L * B + Sbar;
    Vec Rv = R.solve(varpi);
    Vec Bt_ell = B.transpose() * ell;
    return Abar.transpose() * ell - LBS * R.solve(Bt_ell) - LBS * Rv + zetabar + L * b;
  }
};

}  // namespace

OffsetSolution solve_offset(const BarCoefficients& cb, const BarRiccatiSolution& Lsol,
                            const TimeGrid& grid, Backend backend) {
  const NodeField<Mat>& L = Lsol.L;
  if (L.backend() != backend || !(L.grid() == grid))
    throw Error(ErrorKind::invalid_argument,
                "offset solve: L was computed on a different grid or backend");
  const int N = grid.steps;
  const double dt = grid.dt();
  const int n = cb.n;
  if (backend == Backend::ode && !cb.deterministic())
    throw Error(ErrorKind::invalid_argument,
                "ODE backend requires deterministic coefficients for the offset");

  NodeField<Vec> ell(backend, grid, Vec::Zero(n));
  for (int k = N - 1; k >= 0; --k) {
    if (backend == Backend::ode) {
      BarStep s = cb.at(k, N, 0.0);
      OffsetRhs f{s.B, s.Sbar, s.Abar, s.zetabar, s.b, s.varpi, Eigen::LLT<Mat>(s.R)};
      RiccatiRhs lf(QuadraticModel{s.Abar, s.B, s.Sbar, s.Qbar, s.R});
      // Reversed time: the step runs from s0 (t_{k+1}) to s0 + h (t_k).
      const Mat& L0 = L.at(k + 1);
      const Mat& L1 = L.at(k);
      Mat mid = 0.5 * (L0 + L1) + (dt / 8.0) * (lf(L0) - lf(L1));
      const Vec& e = ell.at(k + 1);
      Vec k1 = f(L0, e);
      Vec k2 = f(mid, e + 0.5 * dt * k1);
      Vec k3 = f(mid, e + 0.5 * dt * k2);
      Vec k4 = f(L1, e + dt * k3);
      ell.at(k) = e + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      continue;
    }
    for (int j = 0; j < ell.nodes(k); ++j) {
      BarStep s = cb.at(k, N, common_noise_value(grid, k, j));
      Mat L_hat = L.next_mean(k, j);
      DiscreteStep st = discrete_step(s.Abar, s.B, s.Sbar, s.R, L_hat, dt,
                                      "offset step " + std::to_string(k) + " node " +
                                          std::to_string(j));
      Vec g = ell.next_mean(k, j) + dt * L.martingale(k, j) * s.D0;
      Vec carry = dt * L_hat * s.b + g;
      Vec h_y = dt * s.zetabar + st.Abar.transpose() * carry;
      Vec h_v = dt * s.varpi + st.Bbar.transpose() * carry;
      ell.at(k, j) = h_y - st.M * st.G_llt.solve(h_v);
    }
  }
  return OffsetSolution{std::move(ell)};
}

}  // namespace cmvlq
