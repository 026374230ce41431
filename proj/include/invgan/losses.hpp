#pragma once

// Similarity, cycle, adversarial and combined objectives.

#include <cmath>
#include <string>
#include <vector>

#include "invgan/autograd.hpp"
#include "invgan/ops.hpp"
#include "invgan/volume.hpp"

namespace invgan {

struct LossConfig {
    int ncc_window = 9;
    double lambda_adv = 0.1;
    double epsilon = 1e-5; // variance floor for windowed NCC

    void validate() const
    {
        if (ncc_window < 3 || ncc_window % 2 == 0)
            throw ConfigError("loss: ncc window must be odd and >= 3, got " + std::to_string(ncc_window));
        if (!(lambda_adv >= 0))
            throw ConfigError("loss: lambda must be >= 0");
        if (!(epsilon > 0))
            throw ConfigError("loss: epsilon must be > 0");
    }
    friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

template <class T>
ag::Var<T> to_var(const Volume& v)
{
    Tensor<T> t({1, v.dims.nz, v.dims.ny, v.dims.nx});
    for (std::size_t n = 0; n < v.size(); ++n)
        t.data[n] = static_cast<T>(v.voxels[n]);
    return ag::constant(std::move(t));
}

/// Windowed NCC between two volumes, in [-1, 1].
inline double ncc_local(const Volume& a, const Volume& b, const LossConfig& cfg = {})
{
    require_same_dims(a.dims, b.dims, "ncc_local");
    return ag::ncc(to_var<double>(a), to_var<double>(b), cfg.ncc_window, cfg.epsilon)->value.data[0];
}

/// mean |(T o phi_TS) o phi_ST - T| + mean |(S o phi_ST) o phi_TS - S|
template <class T>
ag::Var<T> cycle_loss(const ag::Var<T>& source, const ag::Var<T>& target, const ag::Var<T>& flow_st,
                      const ag::Var<T>& flow_ts)
{
    auto t_back = ag::warp(ag::warp(target, flow_ts), flow_st);
    auto s_back = ag::warp(ag::warp(source, flow_st), flow_ts);
    return ag::add(ag::mean_abs_diff(t_back, target), ag::mean_abs_diff(s_back, source));
}

inline double bce_with_logits(double logit, double label)
{
    return ag::bce_with_logits(ag::constant(Tensor<double>({1}, logit)), label)->value.data[0];
}

/// Mean binary cross-entropy over the union of real (label 1) and generated
/// (label 0) logits.
template <class T>
ag::Var<T> discriminator_loss(const std::vector<ag::Var<T>>& real, const std::vector<ag::Var<T>>& fake)
{
    if (real.empty() && fake.empty())
        throw DataError("discriminator_loss: empty batch");
    std::vector<ag::Var<T>> terms;
    for (const auto& z : real)
        terms.push_back(ag::bce_with_logits(z, 1.0));
    for (const auto& z : fake)
        terms.push_back(ag::bce_with_logits(z, 0.0));
    return ag::weighted_sum(terms, std::vector<T>(terms.size(), T(1) / static_cast<T>(terms.size())));
}

inline double discriminator_loss(const std::vector<double>& real, const std::vector<double>& fake)
{
    std::vector<ag::Var<double>> r, f;
    for (double z : real)
        r.push_back(ag::constant(Tensor<double>({1}, z)));
    for (double z : fake)
        f.push_back(ag::constant(Tensor<double>({1}, z)));
    return discriminator_loss(r, f)->value.data[0];
}

template <class T>
struct GeneratorLoss {
    ag::Var<T> total;
    ag::Var<T> warped_source; // S o phi_ST, in target space
    ag::Var<T> warped_target; // T o phi_TS, in source space
    double similarity = 0;    // -ncc(S o phi_ST, T) - ncc(T o phi_TS, S)
    double cycle = 0;
    double adversarial = 0; // bce(D_T(fake), 1) + bce(D_S(fake), 1)
};

template <class T>
struct GeneratorLossInputs {
    ag::Var<T> source;
    ag::Var<T> target;
    ag::Var<T> flow_st;
    ag::Var<T> flow_ts;
    // Optional: S o phi_ST and T o phi_TS when already computed.
    ag::Var<T> warped_source;
    ag::Var<T> warped_target;
    // Optional: D_S(S, T o phi_TS) and D_T(T, S o phi_ST).
    ag::Var<T> d_source_fake_logit;
    ag::Var<T> d_target_fake_logit;
};

/// similarity + cycle + lambda * adversarial. When lambda is zero, or the
/// logits are absent, the adversarial term is not attached to the objective.
template <class T>
GeneratorLoss<T> generator_loss(const GeneratorLossInputs<T>& in, const LossConfig& cfg)
{
    cfg.validate();
    GeneratorLoss<T> out;
    out.warped_source = in.warped_source ? in.warped_source : ag::warp(in.source, in.flow_st);
    out.warped_target = in.warped_target ? in.warped_target : ag::warp(in.target, in.flow_ts);
    auto sim_t = ag::ncc(out.warped_source, in.target, cfg.ncc_window, cfg.epsilon);
    auto sim_s = ag::ncc(out.warped_target, in.source, cfg.ncc_window, cfg.epsilon);
    auto cyc = cycle_loss(in.source, in.target, in.flow_st, in.flow_ts);

    std::vector<ag::Var<T>> terms{sim_t, sim_s, cyc};
    std::vector<T> coeff{T(-1), T(-1), T(1)};
    if (in.d_source_fake_logit && in.d_target_fake_logit) {
        auto adv = ag::add(ag::bce_with_logits(in.d_target_fake_logit, 1.0),
                           ag::bce_with_logits(in.d_source_fake_logit, 1.0));
        out.adversarial = adv->value.data[0];
        if (cfg.lambda_adv != 0.0) {
            terms.push_back(adv);
            coeff.push_back(static_cast<T>(cfg.lambda_adv));
        }
    }
    out.total = ag::weighted_sum(terms, coeff);
    out.similarity = -static_cast<double>(sim_t->value.data[0]) - static_cast<double>(sim_s->value.data[0]);
    out.cycle = cyc->value.data[0];
    return out;
}

} // namespace invgan
