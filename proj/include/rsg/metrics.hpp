#pragma once

#include <cstdint>
#include <vector>

#include "rsg/common.hpp"

namespace rsg {

// K x K confusion counts, row = ground truth, column = prediction. Merging
// shards is integer addition, so any merge order gives the same matrix.
struct Confusion {
    int num_classes = 0;
    std::vector<int64_t> counts;  // [K*K]

    explicit Confusion(int k = 0) : num_classes(k), counts(static_cast<size_t>(k) * k, 0) {}

    void add(int32_t gt, int32_t pred) { counts[gt * num_classes + pred]++; }

    void merge(const Confusion& o) {
        for (size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    }
};

struct IouResult {
    std::vector<double> per_class;  // NaN for classes absent from both pred and gt
    double mean = 0.0;
};

// IoU_c = TP / (TP + FP + FN); classes absent from both prediction and ground
// truth are excluded from the mean.
inline IouResult miou_from_confusion(const Confusion& cm) {
    int k = cm.num_classes;
    IouResult r;
    r.per_class.assign(k, std::numeric_limits<double>::quiet_NaN());
    double acc = 0;
    int present = 0;
    for (int c = 0; c < k; ++c) {
        int64_t tp = cm.counts[c * k + c];
        int64_t fn = 0, fp = 0;
        for (int j = 0; j < k; ++j) {
            if (j != c) {
                fn += cm.counts[c * k + j];
                fp += cm.counts[j * k + c];
            }
        }
        int64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // class appears nowhere
        r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
        acc += r.per_class[c];
        ++present;
    }
    r.mean = present ? acc / present : 0.0;
    return r;
}

inline void accumulate_confusion(Confusion& cm, const std::vector<int32_t>& pred,
                                 const std::vector<int32_t>& gt, int32_t ignore_index) {
    if (pred.size() != gt.size()) throw DimError("confusion: size mismatch");
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] == ignore_index) continue;
        cm.add(gt[i], pred[i]);
    }
}

inline IouResult miou(const std::vector<int32_t>& pred, const std::vector<int32_t>& gt, int k,
                      int32_t ignore_index) {
    Confusion cm(k);
    accumulate_confusion(cm, pred, gt, ignore_index);
    return miou_from_confusion(cm);
}

}  // namespace rsg
