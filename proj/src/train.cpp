#include "rsg/train.hpp"

#include <iomanip>
#include <sstream>

namespace rsg {

namespace {

int64_t conv_macs(int64_t out_px, int64_t c_out, int64_t c_in_per_group, int64_t k) {
    return out_px * c_out * c_in_per_group * k * k;
}

int64_t linear_macs(int64_t rows, int64_t d_in, int64_t d_out) { return rows * d_in * d_out; }

// one scan over L tokens: state update (2 mul-adds folded to 2 MACs per
// element) plus readout dot product
int64_t scan_macs(int64_t L, int64_t D, int64_t N) { return 3 * L * D * N; }

}  // namespace

int64_t estimate_macs(const ModelSpec& spec, int image_size) {
    int64_t total = 0;
    int64_t h = image_size;
    const int64_t nstages = static_cast<int64_t>(spec.dims.size());

    // shared encoder applied to two modalities
    int64_t c_in = 3;
    int64_t res = h;
    for (int64_t i = 0; i < nstages; ++i) {
        int64_t c = spec.dims[i];
        res /= (i == 0 ? 4 : 2);
        int64_t px = res * res;
        total += 2 * conv_macs(px, c, c_in, 3);
        total += 2 * conv_macs(px, c, c, 3);
        c_in = c;
    }

    // fusion stages
    res = h;
    for (int64_t i = 0; i < nstages; ++i) {
        int64_t c = spec.dims[i];
        res /= (i == 0 ? 4 : 2);
        int64_t L = res * res;
        int64_t di = c;  // d_inner = d
        int64_t r = spec.rank_div > 0 ? std::max<int64_t>(1, c / spec.rank_div) : 0;
        auto proj = [&](int64_t a, int64_t b) {
            return r > 0 ? linear_macs(L, a, r) + linear_macs(L, r, b) : linear_macs(L, a, b);
        };
        switch (spec.fusion) {
            case FusionKind::Concat:
                total += linear_macs(L, 2 * c, c);
                break;
            case FusionKind::Add:
                break;
            case FusionKind::CrossAttention:
                total += 3 * linear_macs(L, c, c);
                total += 2 * L * L * c;  // QK^T and att*V
                break;
            case FusionKind::CrossMamba:
            case FusionKind::Rsgmb: {
                total += 2 * proj(c, di);  // in-projections
                // per modality: delta/B/C projections
                total += 2 * (linear_macs(L, di, di) + 2 * linear_macs(L, di, spec.n_state));
                if (spec.use_g_u && spec.fusion == FusionKind::Rsgmb) {
                    int64_t hdim = std::max<int64_t>(1, di / 4);
                    total += 2 * (linear_macs(L, di, hdim) + linear_macs(L, hdim, 1));
                }
                if (spec.use_g_c && spec.fusion == FusionKind::Rsgmb) {
                    int64_t hdim = std::max<int64_t>(1, di / 4);
                    total += linear_macs(L, 3 * di, hdim) + linear_macs(L, hdim, 1);
                }
                total += 2 * 2 * scan_macs(L, di, spec.n_state);  // 2 modalities x 2 directions
                total += proj(di, c);  // out-projection
                break;
            }
        }
        if (spec.lcgm) {
            int64_t dl = std::max<int64_t>(1, c / spec.d_loc_div);
            total += 2 * linear_macs(L, c, dl);
            total += 2 * conv_macs(L, dl, dl, 3);  // gate convs
            total += 2 * conv_macs(L, dl, 1, 3);   // depthwise
            total += 2 * linear_macs(L, dl, c);    // cross-term projections
        }
    }

    // decoder at 1/4 resolution
    int64_t q = h / 4;
    int64_t qpx = q * q;
    res = h;
    for (int64_t i = 0; i < nstages; ++i) {
        int64_t c = spec.dims[i];
        res /= (i == 0 ? 4 : 2);
        total += linear_macs(res * res, c, spec.decoder_width);
    }
    total += conv_macs(qpx, spec.decoder_width, spec.decoder_width * nstages, 3);
    total += conv_macs(qpx, spec.decoder_width, spec.decoder_width, 3);
    total += conv_macs(qpx, spec.num_classes, spec.decoder_width, 1);
    return total;
}

std::vector<AblationCell> make_ablation_grid(const std::string& grid, const RunConfig& base) {
    std::vector<AblationCell> cells;
    auto with = [&](const std::string& name, auto&& edit) {
        RunConfig c = base;
        edit(c);
        cells.push_back({name, c});
    };
    if (grid == "components") {
        // global/local module on-off; "neither" degenerates to plain addition
        with("none", [](RunConfig& c) {
            c.model.fusion = FusionKind::Add;
            c.model.lcgm = false;
        });
        with("lcgm_only", [](RunConfig& c) {
            c.model.fusion = FusionKind::Add;
            c.model.lcgm = true;
        });
        with("rsgmb_only", [](RunConfig& c) {
            c.model.fusion = FusionKind::Rsgmb;
            c.model.lcgm = false;
        });
        with("rsgmb_lcgm", [](RunConfig& c) {
            c.model.fusion = FusionKind::Rsgmb;
            c.model.lcgm = true;
        });
        cells[0].name += " (baseline)";
    } else if (grid == "gates") {
        auto gate_cell = [&](const std::string& name, bool gu, bool gc) {
            with(name, [&](RunConfig& c) {
                c.model.fusion = FusionKind::Rsgmb;
                c.model.use_g_u = gu;
                c.model.use_g_c = gc;
            });
        };
        gate_cell("none (baseline)", false, false);
        gate_cell("g_u_only", true, false);
        gate_cell("g_c_only", false, true);
        gate_cell("both", true, true);
    } else if (grid == "projection") {
        with("linear (baseline)", [](RunConfig& c) {
            c.model.fusion = FusionKind::Rsgmb;
            c.model.rank_div = 0;
        });
        with("lowrank", [&](RunConfig& c) {
            c.model.fusion = FusionKind::Rsgmb;
            c.model.rank_div = base.model.rank_div > 0 ? base.model.rank_div : 8;
        });
    } else if (grid == "fusion") {
        for (FusionKind k : {FusionKind::Concat, FusionKind::Add, FusionKind::CrossAttention,
                             FusionKind::CrossMamba, FusionKind::Rsgmb}) {
            with(fusion_name(k), [&](RunConfig& c) {
                c.model.fusion = k;
                c.model.lcgm = false;
            });
        }
        cells[0].name += " (baseline)";
    } else {
        throw ConfigError("unknown ablation grid: " + grid +
                          " (expected components|gates|projection|fusion)");
    }
    for (auto& c : cells) c.cfg.model.num_classes = base.data.num_classes;
    return cells;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(24) << "cell" << std::right << std::setw(12) << "params"
       << std::setw(14) << "MMACs" << std::setw(10) << "mIoU" << std::setw(10) << "delta"
       << "\n";
    os << std::string(70, '-') << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(24) << r.name << std::right << std::setw(12) << r.params
           << std::setw(14) << std::fixed << std::setprecision(2)
           << static_cast<double>(r.macs) / 1e6;
        if (r.mious.empty())
            os << std::setw(10) << "-" << std::setw(10) << "-";
        else {
            os << std::setw(10) << std::setprecision(4) << r.median_miou;
            if (r.is_baseline)
                os << std::setw(10) << "-";
            else
                os << std::setw(10) << std::showpos << std::setprecision(4) << r.delta
                   << std::noshowpos;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace rsg
