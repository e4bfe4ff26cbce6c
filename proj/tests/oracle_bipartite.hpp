#pragma once

// Exhaustive brute-force reference for the bipartite merger, kept independent
// of the library's selection logic: every step recomputes the full |A| x |B|
// cosine matrix of the current sequence and merges the single globally best
// pair (ties to the lower A position, then the lower B position).

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace oracle {

struct Token {
    std::vector<double> feat;
    double weight = 1.0;
    std::size_t size = 1;
    std::vector<int> members;
};

struct Merge {
    int a_pos, b_pos;
    double sim;
};

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double den = std::sqrt(na) * std::sqrt(nb);
    return den == 0.0 ? 0.0 : dot / den;
}

struct Result {
    std::vector<Merge> merges;
    std::vector<std::vector<double>> final_tokens;  // canonical group means
    std::vector<std::size_t> sizes;
    std::vector<std::vector<int>> groups;
};

inline Result run(const std::vector<std::vector<double>>& seeds,
                  const std::vector<double>& weights, std::size_t k) {
    std::vector<Token> toks(seeds.size());
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        toks[i].feat = seeds[i];
        toks[i].weight = weights.empty() ? 1.0 : weights[i];
        toks[i].members = {int(i)};
    }
    Result res;
    while (toks.size() > k) {
        const std::size_t count = toks.size();
        double best = -std::numeric_limits<double>::infinity();
        std::size_t ba = 0, bb = 0;
        for (std::size_t a = 0; a < count; a += 2)
            for (std::size_t b = 1; b < count; b += 2) {
                double s = cosine(toks[a].feat, toks[b].feat);
                if (s > best) {
                    best = s;
                    ba = a;
                    bb = b;
                }
            }
        res.merges.push_back({int(ba), int(bb), best});
        Token& src = toks[ba];
        Token& dst = toks[bb];
        const double wa = src.weight, wb = dst.weight;
        for (std::size_t j = 0; j < dst.feat.size(); ++j)
            dst.feat[j] = (wa * src.feat[j] + wb * dst.feat[j]) / (wa + wb);
        dst.weight = wa + wb;
        dst.size += src.size;
        dst.members.insert(dst.members.end(), src.members.begin(), src.members.end());
        toks.erase(toks.begin() + std::ptrdiff_t(ba));
    }
    for (const Token& t : toks) {
        // same canonical arithmetic as the library: ordered weighted sum, then
        // one multiplication by the reciprocal total
        std::vector<double> sum(t.feat.size(), 0.0);
        double wsum = 0.0;
        for (int m : t.members) {
            const double w = weights.empty() ? 1.0 : weights[std::size_t(m)];
            for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += w * seeds[std::size_t(m)][j];
            wsum += w;
        }
        const double inv = 1.0 / wsum;
        for (double& v : sum) v *= inv;
        res.final_tokens.push_back(std::move(sum));
        res.sizes.push_back(t.size);
        res.groups.push_back(t.members);
    }
    return res;
}

}  // namespace oracle
