// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "csipred/evaluation.hpp"

#include "csipred/tensor_prep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace csipred {

ModelForecaster::ModelForecaster(std::shared_ptr<const Predictor<float>> model, std::string label)
    : model_(std::move(model)), label_(std::move(label)) {
    if (!model_) throw std::invalid_argument("ModelForecaster: null model");
}

RealTensor ModelForecaster::predict(const WindowBatch& batch) const {
    ad::NoGradGuard no_grad;
    return model_->forward(batch.history).value();
}

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Snr: return "snr";
        case SweepAxis::Velocity: return "velocity";
        case SweepAxis::Step: return "step";
    }
    return "?";
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "snr") return SweepAxis::Snr;
    if (name == "velocity") return SweepAxis::Velocity;
    if (name == "step") return SweepAxis::Step;
    throw std::invalid_argument("unknown sweep axis '" + name + "' (expected snr, velocity or step)");
}

std::vector<double> default_grid(SweepAxis axis, const DatasetSplit& split) {
    switch (axis) {
        case SweepAxis::Snr: return {0.0, 5.0, 10.0, 15.0, 20.0};
        case SweepAxis::Velocity: return split.velocities_kmh;
        case SweepAxis::Step: {
            std::vector<double> steps;
            for (Index p = 1; p <= split.system.horizon; ++p) steps.push_back(static_cast<double>(p));
            return steps;
        }
    }
    return {};
}

std::vector<NmseAccumulator> per_step_accumulators(const RealTensor& pred, const RealTensor& truth) {
    if (pred.shape() != truth.shape() || pred.rank() != 3)
        throw std::invalid_argument("per-step nmse: expects matching [B, P, N] tensors");
    const Index b = pred.dim(0), p = pred.dim(1), n = pred.dim(2);
    std::vector<NmseAccumulator> out(static_cast<std::size_t>(p));
    for (Index row = 0; row < b; ++row)
        for (Index s = 0; s < p; ++s) {
            const Index off = (row * p + s) * n;
            const auto d = pred.data().segment(off, n).template cast<double>() - truth.data().segment(off, n).template cast<double>();
            auto& acc = out[static_cast<std::size_t>(s)];
            acc.error += d.squaredNorm();
            acc.reference += truth.data().segment(off, n).template cast<double>().squaredNorm();
        }
    return out;
}

namespace {

/// Forecasts the listed realizations in batches at one SNR and feeds the
/// per-step accumulators.
std::vector<NmseAccumulator> run_forecast(const Forecaster& f, const DatasetSplit& split,
                                          const std::vector<Index>& samples, double snr_db,
                                          const SweepOptions& options) {
    std::vector<NmseAccumulator> steps(static_cast<std::size_t>(split.system.horizon));
    for (std::size_t s = 0; s < samples.size(); s += static_cast<std::size_t>(options.batch_size)) {
        const std::size_t e = std::min(samples.size(), s + static_cast<std::size_t>(options.batch_size));
        std::vector<Index> idx(samples.begin() + static_cast<std::ptrdiff_t>(s),
                               samples.begin() + static_cast<std::ptrdiff_t>(e));
        std::vector<std::uint64_t> seeds;
        for (Index i : idx) seeds.push_back(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
        const auto w = make_windows(split, idx, std::vector<double>(idx.size(), snr_db), seeds);
        const RealTensor pred = f.predict(w);
        const auto part = per_step_accumulators(pred, w.target);
        for (std::size_t p = 0; p < steps.size(); ++p) steps[p].merge(part[p]);
    }
    for (auto& acc : steps) acc.count = static_cast<Index>(samples.size());
    return steps;
}

NmseAccumulator combine(const std::vector<NmseAccumulator>& steps) {
    NmseAccumulator all;
    for (const auto& s : steps) {
        all.error += s.error;
        all.reference += s.reference;
    }
    all.count = steps.empty() ? 0 : steps.front().count;
    return all;
}

EvalRecord make_record(SweepAxis axis, double value, const NmseAccumulator& acc, const std::string& variant,
                       const std::string& scenario) {
    const double v = acc.value();
    return {axis, value, v, nmse_db(v), acc.count, variant, scenario};
}

}  // namespace

std::vector<EvalRecord> evaluate_sweep(const Forecaster& forecaster, const DatasetSplit& split, SweepAxis axis,
                                       const std::vector<double>& grid, const SweepOptions& options) {
    if (grid.empty()) throw std::invalid_argument("evaluate_sweep: empty grid");
    if (options.batch_size < 1) throw std::invalid_argument("evaluate_sweep: batch_size must be positive");
    if (forecaster.horizon() != split.system.horizon)
        throw std::invalid_argument("evaluate_sweep: forecaster horizon differs from the dataset");
    std::vector<Index> all(static_cast<std::size_t>(split.size()));
    std::iota(all.begin(), all.end(), Index{0});
    std::vector<EvalRecord> out;
    switch (axis) {
        case SweepAxis::Snr:
            for (double snr : grid)
                out.push_back(make_record(axis, snr, combine(run_forecast(forecaster, split, all, snr, options)),
                                          forecaster.label(), split.scenario));
            break;
        case SweepAxis::Velocity:
            for (double v : grid) {
                const auto idx = split.indices_with_velocity(v);
                if (idx.empty())
                    throw std::invalid_argument("evaluate_sweep: no samples at velocity " + io::format_double(v) +
                                                " km/h");
                out.push_back(make_record(axis, v,
                                          combine(run_forecast(forecaster, split, idx, options.fixed_snr_db, options)),
                                          forecaster.label(), split.scenario));
            }
            break;
        case SweepAxis::Step: {
            const auto steps = run_forecast(forecaster, split, all, options.fixed_snr_db, options);
            for (double p : grid) {
                const auto s = static_cast<Index>(std::llround(p));
                if (s < 1 || s > static_cast<Index>(steps.size()) || std::abs(p - static_cast<double>(s)) > 1e-9)
                    throw std::invalid_argument("evaluate_sweep: step " + io::format_double(p) + " outside 1.." +
                                                std::to_string(steps.size()));
                out.push_back(make_record(axis, p, steps[static_cast<std::size_t>(s - 1)], forecaster.label(),
                                          split.scenario));
            }
            break;
        }
    }
    return out;
}

void write_records_tsv(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
    os << "axis\tvalue\tvariant\tscenario\tnmse\tnmse_db\tsamples\n";
    for (const auto& r : records)
        os << to_string(r.axis) << '\t' << io::format_double(r.value) << '\t' << r.variant << '\t' << r.scenario
           << '\t' << io::format_double(r.nmse) << '\t' << io::format_double(r.nmse_db) << '\t' << r.samples << '\n';
    if (!os) throw io::IoError("failed writing " + path.string());
}

std::vector<EvalRecord> read_records_tsv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw io::IoError("cannot open " + path.string());
    std::string line;
    std::getline(is, line);
    std::vector<EvalRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, '\t')) cols.push_back(c);
        if (cols.size() != 7) throw io::IoError("malformed row in " + path.string() + ": " + line);
        out.push_back({parse_sweep_axis(cols[0]), io::parse_double(cols[1]), io::parse_double(cols[4]),
                       io::parse_double(cols[5]), std::stoll(cols[6]), cols[2], cols[3]});
    }
    return out;
}

void write_sweep_svg(const std::filesystem::path& path, const std::vector<EvalRecord>& records,
                     const std::string& title) {
    if (records.empty()) throw std::invalid_argument("write_sweep_svg: no records");
    std::vector<std::string> variants;
    for (const auto& r : records)
        if (std::find(variants.begin(), variants.end(), r.variant) == variants.end()) variants.push_back(r.variant);

    double x0 = records.front().value, x1 = x0, y0 = records.front().nmse_db, y1 = y0;
    for (const auto& r : records) {
        x0 = std::min(x0, r.value);
        x1 = std::max(x1, r.value);
        y0 = std::min(y0, r.nmse_db);
        y1 = std::max(y1, r.nmse_db);
    }
    if (x1 == x0) x1 = x0 + 1.0;
    y0 = std::floor(y0 - 1.0);
    y1 = std::ceil(y1 + 1.0);

    const double w = 640, h = 420, left = 70, right = 170, top = 40, bottom = 60;
    auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * (w - left - right); };
    auto sy = [&](double y) { return top + (y1 - y) / (y1 - y0) * (h - top - bottom); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    const std::string axis_name = to_string(records.front().axis);
    const std::string x_label = axis_name == "snr" ? "SNR (dB)" : axis_name == "velocity" ? "velocity (km/h)" : "prediction step";

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << (w - right + left) / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << title
        << "</text>\n"
        << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w - left - right << "\" height=\""
        << h - top - bottom << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
        const double yv = y0 + (y1 - y0) * i / 5.0, xv = x0 + (x1 - x0) * i / 5.0;
        svg << "<text x=\"" << left - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << std::round(yv * 10) / 10
            << "</text>\n"
            << "<text x=\"" << sx(xv) << "\" y=\"" << h - bottom + 18 << "\" text-anchor=\"middle\">"
            << std::round(xv * 10) / 10 << "</text>\n"
            << "<line x1=\"" << left << "\" x2=\"" << w - right << "\" y1=\"" << sy(yv) << "\" y2=\"" << sy(yv)
            << "\" stroke=\"#ddd\"/>\n";
    }
    svg << "<text x=\"" << (w - right + left) / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n"
        << "<text transform=\"translate(18," << (h - bottom + top) / 2
        << ") rotate(-90)\" text-anchor=\"middle\">NMSE (dB)</text>\n";
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        const char* color = colors[vi % 8];
        std::vector<std::pair<double, double>> pts;
        for (const auto& r : records)
            if (r.variant == variants[vi]) pts.emplace_back(r.value, r.nmse_db);
        std::sort(pts.begin(), pts.end());
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : pts) svg << sx(x) << ',' << sy(y) << ' ';
        svg << "\"/>\n";
        for (const auto& [x, y] : pts)
            svg << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = top + 16 + 18 * static_cast<double>(vi);
        svg << "<line x1=\"" << w - right + 12 << "\" x2=\"" << w - right + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << w - right + 42 << "\" y=\"" << ly + 4 << "\">" << variants[vi] << "</text>\n";
    }
    svg << "</svg>\n";

    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io::IoError("cannot open " + path.string() + " for writing");
    os << svg.str();
}

ComparisonResult compare_variants(const std::vector<const Forecaster*>& forecasters, const DatasetSplit& split,
                                  SweepAxis axis, const std::vector<double>& grid, const SweepOptions& options,
                                  const std::filesystem::path& out_dir, const std::string& stem) {
    if (forecasters.size() < 2) throw std::invalid_argument("compare_variants: need at least two checkpoints");
    for (const auto* f : forecasters)
        if (f->horizon() != forecasters.front()->horizon())
            throw std::invalid_argument("compare_variants: grid mismatch, '" + f->label() + "' predicts " +
                                        std::to_string(f->horizon()) + " steps");
    std::vector<std::vector<EvalRecord>> per_variant;
    for (const auto* f : forecasters) per_variant.push_back(evaluate_sweep(*f, split, axis, grid, options));

    ComparisonResult result;
    for (std::size_t g = 0; g < grid.size(); ++g)
        for (const auto& recs : per_variant) result.records.push_back(recs[g]);

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    result.table = out_dir / (stem + ".tsv");
    result.plot = out_dir / (stem + ".svg");
    write_records_tsv(result.table, result.records);
    write_sweep_svg(result.plot, result.records, "NMSE vs " + to_string(axis) + " (" + split.scenario + ")");
    return result;
}

CsiTensor predict_dl(const Forecaster& forecaster, const CsiTensor& ul_history, Index horizon,
                     const CsiTensor* future) {
    if (ul_history.rank() != 4) throw std::invalid_argument("predict_dl: history must be [L, K, N_BS, N_UE]");
    const Index l = ul_history.dim(0), k = ul_history.dim(1), n_bs = ul_history.dim(2), n_ue = ul_history.dim(3);
    const Index slice = k * n_bs * n_ue;
    CsiTensor window({l + horizon, k, n_bs, n_ue});
    window.data().head(l * slice) = ul_history.data();
    if (future) {
        if (future->shape() != Shape{horizon, k, n_bs, n_ue})
            throw std::invalid_argument("predict_dl: future has shape " + to_string(future->shape()));
        window.data().tail(horizon * slice) = future->data();
    }
    const auto real = to_real_window<float>(window, l);
    const RealTensor pred = forecaster.predict({real.history, real.target, {0}});
    const Index n = 2 * n_bs * n_ue;
    if (pred.shape() != Shape{k, horizon, n})
        throw std::invalid_argument("predict_dl: forecaster returned " + to_string(pred.shape()));

    CsiTensor dl({horizon, k, n_ue, n_bs});
    using Mat = Eigen::Matrix<std::complex<float>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    for (Index p = 0; p < horizon; ++p)
        for (Index kk = 0; kk < k; ++kk) {
            const auto h_ul = devectorize_csi(pred.data().segment((kk * horizon + p) * n, n), n_bs, n_ue);
            Eigen::Map<Mat>(dl.ptr() + (p * k + kk) * n_ue * n_bs, n_ue, n_bs) = apply_reciprocity(h_ul);
        }
    return dl;
}

}  // namespace csipred
