//! Prompt templates for teacher annotation, answer augmentation, and
//! student training/evaluation.
//!
//! The templates are fixed text with `{problem}` / `{solution}` /
//! `{question}` fill slots. Rendering is byte-deterministic; the golden
//! files under `tests/golden/` pin the exact bytes.

/// Teacher prompt: identify the problem type, then produce a similar
/// problem with its solution. Two in-context examples are part of the
/// template.
pub const ANNOTATION_PROMPT_TEMPLATE: &str = "You are a professional math teacher, and your goal is to teach your student to learn a given math problem. Identify the type of the given problem and the name of the solution method. Then, generate a similar problem with its solution.

## Example 1:
### Original Problem:
Youngsville had a population of 684 people. The town had a growth spurt and the population increased by 25% then they witnessed that 40% of the population moved away. What is the current population?

### Solution to the Original Problem:
The town had 684 people, and then had a 25% growth spurt, so the population increased by 684 * 0.25 = 171 people. This increase brought the population to 684 + 171 = 855 people. 40% of the population moved away, so 855 * 0.40 = 342 people moved away. The new population is 855 - 342 = 513 people. The answer is 513.

### Type of Problem and Solution Method:
This is a consecutive percentage change problem. The solution method involves applying the growth factor first, then applying the reduction factor. The key to solve the problem is to understand the concept of relative increase and decrease percentages.

### Similar Problem:
A company started with 800 employees. After one year, the workforce increased by 20%, and then 30% of the new workforce decided to quit due to relocation. How many employees remain at the company?

### Solution to the Similar Problem:
1. Initial employees: 800.

2. Increase by 20%: 20% of 800 is 160, so the workforce grows to 800 + 160 = 960.

3. Then, 30% of these 960 employees quit: 30% of 960 is 288, so 288 employees leave.

4. Remaining employees: 960 - 288 = 672. Therefore, the final number of employees is 672.

## Example 2:
### Original Problem:
Solve the equation (x - 99)(x - 101) = 8.

### Solution to the Original Problem:
Let t=x-100. Then the equation becomes (t - 1)(t + 1) = 8, which transforms into $t^2$ - 1 = 8. Therefore, t = 3 or t = -3, and accordingly we get x = 97 or x = 103.

### Type of Problem and Solution Method:
This is a quadratic equation problem solved by introducing a substitution to simplify the expression. The solution method involves recognizing a suitable substitution that transforms the equation into a simpler form. The key to solving the problem is understanding how to use algebraic manipulation to facilitate solving equations.

### Similar Problem:
Solve the equation (x - 50)(x - 52) = 4.

### Solution to the Similar Problem:
1. Notice that the middle point between 50 and 52 is 51, so let t = x - 51.

2. Then (x - 50) = (t + 1) and (x - 52) = (t - 1).

3. The equation becomes (t + 1)(t - 1) = 4 => $t^2$ - 1 = 4 => $t^2$ = 5 => t = $\\sqrt{5}$ or t = $-\\sqrt{5}$.

4. Substituting back: x = t + 51.
   - If $t = \\sqrt{5}$, then $x = 51 + \\sqrt{5}$.
   - If $t = -\\sqrt{5}$, then $x = 51 - \\sqrt{5}$.

Hence, the solutions are $x = 51 + \\sqrt{5}$ or $x = 51 - \\sqrt{5}$.

### Original Problem:
{problem}

### Solution to the Original Problem:
{solution}
";

/// Teacher prompt for rewriting a gold solution into enumerated steps.
pub const AUGMENT_PROMPT_TEMPLATE: &str = "You are a professional math teacher, and your goal is to teach your student to learn a given math problem. Identify the type of the given problem and the name of the solution method. Then, generate a similar problem with its solution.

## Example 1:
### Problem:
Youngsville had a population of 684 people. The town had a growth spurt and the population increased by 25% then they witnessed that 40% of the population moved away. What is the current population?

### Original Solution:
The town had 684 people, and then had a 25% growth spurt, so the population increased by 684 * 0.25 = 171 people. This increase brought the population to 684 + 171 = 855 people. 40% of the population moved away, so 855 * 0.40 = 342 people moved away. The new population is 855 - 342 = 513 people. The answer is 513.

### Augmented Solution:
1. Initial population: 684.
2. Growth by 25%: 25% of 684 is 171, so the population increases to 684 + 171 = 855.
3. 40% of 855 moved away: 40% of 855 is 342, so 342 people moved away.
4. The remaining population is 855 - 342 = 513.
Therefore, the final population is 513.

## Example 2:
### Problem:
Solve the equation (x - 99)(x - 101) = 8.

### Original Solution:
Let $t = x - 100$. Then the equation becomes $(t - 1)(t + 1) = 8$, which transforms into $t^2 - 1 = 8$. Therefore, $t = 3$ or $t = -3$, and accordingly we get x = 97 or x = 103.

### Augmented Solution:
1. Notice that the middle point between 99 and 101 is 100, so let t = x - 100.

2. Then $(x - 99) = (t + 1)$ and $(x - 101) = (t - 1)$.

3. The equation becomes $(t + 1)(t - 1) = 8 => t^2 - 1 = 8 => t^2 = 9 => t = 3 or t = -3$.

4. Substituting back: x = t + 100.
   - If t = 3, then x = 100 + 3.
   - If t = -3, then x = 100 - 3.

Hence, the solutions are x = 103 or x = 97.

### Problem:
{problem}

### Original Solution:
{solution}
";

/// Student-side instruction wrapper used for both training records and
/// inference prompts.
pub const TRAIN_PROMPT_TEMPLATE: &str =
    "### Instruction:\n{question}\n\n### Response: Let's think step by step.";

/// Fill a two-slot template. The template is split at the slot markers so
/// slot values containing a literal `{problem}` or `{solution}` cannot
/// corrupt the render.
fn fill_two(template: &str, slot_a: &str, a: &str, slot_b: &str, b: &str) -> String {
    let (head, rest) = template
        .split_once(slot_a)
        .expect("template has first slot");
    let (mid, tail) = rest.split_once(slot_b).expect("template has second slot");
    let mut out = String::with_capacity(template.len() + a.len() + b.len());
    out.push_str(head);
    out.push_str(a);
    out.push_str(mid);
    out.push_str(b);
    out.push_str(tail);
    out
}

pub fn render_annotation_prompt_text(problem: &str, solution: &str) -> String {
    fill_two(
        ANNOTATION_PROMPT_TEMPLATE,
        "{problem}",
        problem,
        "{solution}",
        solution,
    )
}

pub fn render_augment_prompt_text(problem: &str, solution: &str) -> String {
    fill_two(
        AUGMENT_PROMPT_TEMPLATE,
        "{problem}",
        problem,
        "{solution}",
        solution,
    )
}

/// Render the instruction wrapper around a question.
pub fn render_instruction(question: &str) -> String {
    let (head, tail) = TRAIN_PROMPT_TEMPLATE
        .split_once("{question}")
        .expect("template has question slot");
    format!("{head}{question}{tail}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotation_template_opens_with_teacher_line() {
        assert!(ANNOTATION_PROMPT_TEMPLATE.starts_with("You are a professional math teacher"));
        assert!(AUGMENT_PROMPT_TEMPLATE.starts_with("You are a professional math teacher"));
    }

    #[test]
    fn slot_values_with_marker_text_do_not_corrupt_render() {
        let rendered = render_annotation_prompt_text("{solution} trap", "plain");
        assert!(rendered.contains("### Original Problem:\n{solution} trap\n"));
        assert!(rendered.ends_with("### Solution to the Original Problem:\nplain\n"));
    }

    #[test]
    fn instruction_wrapper_matches_contract() {
        let got = render_instruction("What is 2+2?");
        assert_eq!(
            got,
            "### Instruction:\nWhat is 2+2?\n\n### Response: Let's think step by step."
        );
    }
}
