#pragma once

#include "vadnet/report.hpp"

namespace fixtures {

// Published RMSE results (baseline vs. orthogonally regularized network).
inline vadnet::EvalReport published_report() {
    using vadnet::Dimension;
    using vadnet::EvalSplit;
    using vadnet::Method;
    vadnet::EvalReport r;
    r.set(Dimension::Valence, EvalSplit::Public, Method::Baseline, 0.076);
    r.set(Dimension::Valence, EvalSplit::Private, Method::Baseline, 0.063);
    r.set(Dimension::Valence, EvalSplit::Public, Method::Ortho, 0.071);
    r.set(Dimension::Valence, EvalSplit::Private, Method::Ortho, 0.059);
    r.set(Dimension::Arousal, EvalSplit::Public, Method::Baseline, 0.048);
    r.set(Dimension::Arousal, EvalSplit::Private, Method::Baseline, 0.094);
    r.set(Dimension::Arousal, EvalSplit::Public, Method::Ortho, 0.045);
    r.set(Dimension::Arousal, EvalSplit::Private, Method::Ortho, 0.087);
    r.set(Dimension::Dominance, EvalSplit::Public, Method::Baseline, 0.078);
    r.set(Dimension::Dominance, EvalSplit::Private, Method::Baseline, 0.069);
    r.set(Dimension::Dominance, EvalSplit::Public, Method::Ortho, 0.080);
    r.set(Dimension::Dominance, EvalSplit::Private, Method::Ortho, 0.066);
    return r;
}

}  // namespace fixtures
