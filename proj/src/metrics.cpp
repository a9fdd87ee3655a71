#include "volseg/metrics.hpp"

namespace volseg {

double dice(const Volume& a, const Volume& b) {
    if (a.dims != b.dims) throw DimMismatch("dice: mask dims differ");
    if (a.dtype != Dtype::label8 || b.dtype != Dtype::label8) {
        throw DimMismatch("dice: masks must be label8");
    }
    uint64_t inter = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.labels.size(); ++i) {
        na += a.labels[i];
        nb += b.labels[i];
        inter += uint64_t(a.labels[i]) & b.labels[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * double(inter) / double(na + nb);
}

ConfusionMatrix confusion(const std::vector<ClassLabel>& true_labels,
                          const std::vector<ClassLabel>& predicted_labels) {
    if (true_labels.size() != predicted_labels.size()) {
        throw LengthMismatch("confusion: label list lengths differ");
    }
    ConfusionMatrix m;
    for (size_t i = 0; i < true_labels.size(); ++i) {
        bool t = true_labels[i] == ClassLabel::mutant;
        bool p = predicted_labels[i] == ClassLabel::mutant;
        if (t && p) ++m.tp;
        else if (t && !p) ++m.fn;
        else if (!t && p) ++m.fp;
        else ++m.tn;
    }
    return m;
}

MetricSummary summarize(const ConfusionMatrix& m) {
    MetricSummary s;
    s.accuracy = double(m.tp + m.tn) / double(m.total());
    if (m.tp + m.fn > 0) s.sensitivity = double(m.tp) / double(m.tp + m.fn);
    if (m.tn + m.fp > 0) s.specificity = double(m.tn) / double(m.tn + m.fp);
    return s;
}

}  // namespace volseg
